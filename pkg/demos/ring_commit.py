"""One Append through a six-replica ring, traced end to end in simulation.

Shows the commit latency, how many link traversals the reply needed, and
how many broadcast envelopes each replica processed for the batch.

    python3 demos/ring_commit.py
"""

from ringbft.sim import Scenario, WorkloadConfig, run_sim
from ringbft.sim.run import build

N = 6
cfg = build(Scenario(n=N, workload=WorkloadConfig(kind="script"))).cfg
seq = cfg.sequencer(0)
print(f"ring order {list(cfg.ring_order)}, sequencer {seq}")

for label, target in (("sequencer's predecessor", cfg.predecessor(seq)),
                      ("sequencer's successor", cfg.successor(seq))):
    sc = Scenario(n=N, latency=10.0, jitter=0.0,
                  workload=WorkloadConfig(kind="script", ops=[(0.0, target, "hello")]))
    m = run_sim(sc, early_stop=False)
    row = next(iter(m.per_replica.values()))
    print(f"client at the {label} (replica {target}): {m.hops[0]} link traversals, "
          f"{m.scripted_latency[0] * 1000:.0f} ms, {row['envelopes']} envelopes per replica")
