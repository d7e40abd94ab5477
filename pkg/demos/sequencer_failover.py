"""Crash the first F sequencers of an 11-replica ring and watch the log keep growing.

    python3 demos/sequencer_failover.py
"""

from ringbft.sim import Scenario, WorkloadConfig, cascade, run_sim
from ringbft.sim.run import build

N = 11
base = Scenario(n=N, latency=10.0, workload=WorkloadConfig(kind="script"))
cfg = build(base).cfg
ops = [(0.01 * i, cfg.at(3 * i), f"op{i}") for i in range(8)]

for k in range(cfg.f + 1):
    adv = [cascade(cfg, k, "crash")] if k else []
    m = run_sim(base.replace(adversaries=adv, workload=WorkloadConfig(kind="script", ops=ops)))
    faulty = list(adv[0].members) if adv else []
    print(f"faulty sequencers {faulty}: {m.committed_entries} entries committed, "
          f"{m.reconfigurations} reconfiguration(s), all committed: {m.live}, "
          f"finished at {m.sim_time:.2f}s simulated")
