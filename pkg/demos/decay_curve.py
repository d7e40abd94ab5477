"""Normalised peak throughput of the ring and the leader reference as n grows.

Takes a few minutes; pass sizes to shorten it, e.g. ``6 16``.

    python3 demos/decay_curve.py [sizes...]
"""

import sys

from ringbft.bench import WorkloadSpec, sweep
from ringbft.sim import Scenario, leader_broadcast_model

sizes = [int(x) for x in sys.argv[1:]] or [6, 11, 16, 21, 26, 31]
spec = WorkloadSpec(duration_s=5, warmup_s=12, cooldown_s=0.5)
rows = sweep(sizes, spec, lambda n: Scenario(n=n, latency=10.0, capacity={}, batch_delay=0.005),
             ladder=(16, 32, 64, 128, 256))
leader = [leader_broadcast_model(n, {"bytes_per_second": 180000}).throughput for n in sizes]
print(f"{'n':>4} {'ring/s':>8} {'ring':>6} {'leader':>7}")
for row, lt in zip(rows, leader):
    print(f"{row.n:>4} {row.peak:>8.1f} {row.normalized:>6.2f} {lt / leader[0]:>7.2f}")
