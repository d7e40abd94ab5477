"""Closed-loop measurement against a simulated or a real deployment.

An endpoint is either a :class:`ringbft.sim.Scenario` (the workload section
is replaced by the spec) or a :class:`ringbft.runtime.node.NodeConfig`
describing a running deployment.
"""

from __future__ import annotations

import asyncio
import dataclasses
import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from ..sim.run import RunMetrics, Scenario, WorkloadConfig, run_sim

TARGETS = ("sequencer", "head", "random-replica", "random", "fixed")


@dataclass
class WorkloadSpec:
    clients: int = 10
    threads_per_client: int = 1
    request_bytes: int = 250
    duration_s: float = 30.0
    warmup_s: float = 15.0
    cooldown_s: float = 15.0
    target: str = "random-replica"
    fixed: int = 0
    timeout_s: float | None = None

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"unknown target rule {self.target!r}; expected one of {TARGETS}")
        if min(self.clients, self.threads_per_client) < 1:
            raise ValueError("clients and threads_per_client must be positive")
        if min(self.duration_s, self.warmup_s, self.cooldown_s) < 0:
            raise ValueError("durations must be non-negative")

    def with_threads(self, threads: int) -> "WorkloadSpec":
        return dataclasses.replace(self, threads_per_client=threads)

    def to_sim(self) -> WorkloadConfig:
        return WorkloadConfig(clients=self.clients, threads=self.threads_per_client,
                              request_bytes=self.request_bytes, target=self.target, fixed=self.fixed,
                              duration=self.duration_s, warmup=self.warmup_s, cooldown=self.cooldown_s,
                              timeout=self.timeout_s)


@dataclass
class Report:
    """One measurement; ``reps`` holds per-repetition throughputs when repeated."""

    throughput: float = 0.0
    latency_avg: float = 0.0
    latency_p50: float = 0.0
    latency_p99: float = 0.0
    completed: int = 0
    committed: int | None = None
    window: float = 0.0
    series: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    reps: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.reps) if self.reps else self.throughput

    @property
    def stddev(self) -> float:
        return statistics.stdev(self.reps) if len(self.reps) > 1 else 0.0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mean"] = self.mean
        d["stddev"] = self.stddev
        return d


def _latency_stats(samples) -> tuple[float, float, float]:
    if not len(samples):
        return 0.0, 0.0, 0.0
    arr = np.asarray(samples, dtype=float)
    return float(arr.mean()), float(np.percentile(arr, 50)), float(np.percentile(arr, 99))


def _from_metrics(m: RunMetrics, spec: WorkloadSpec, sc: Scenario) -> Report:
    return Report(
        throughput=m.throughput, latency_avg=m.latency_avg, latency_p50=m.latency_p50,
        latency_p99=m.latency_p99, completed=m.completed, committed=m.committed_in_window,
        window=spec.duration_s, series=list(m.series),
        config={"protocol": sc.protocol, "n": sc.n, "seed": m.seed, **dataclasses.asdict(spec)},
        violations=list(m.violations),
    )


async def _run_real(spec: WorkloadSpec, cfg, seed: int) -> Report:
    from ..runtime.client import Client, LoadSpec

    load = LoadSpec(threads=spec.threads_per_client, request_bytes=spec.request_bytes,
                    duration=spec.duration_s, warmup=spec.warmup_s, cooldown=spec.cooldown_s,
                    target="random" if spec.target == "random-replica" else spec.target,
                    fixed=spec.fixed, timeout=spec.timeout_s or 5.0)
    clients = [Client(cfg, cfg.n + k) for k in range(spec.clients)]
    for c in clients:
        await c.start()
    await asyncio.sleep(0.2)
    try:
        results = await asyncio.gather(*(c.closed_loop(load, seed + k) for k, c in enumerate(clients)))
    finally:
        for c in clients:
            await c.close()
    done = [x for r in results for x in r.in_window()]
    avg, p50, p99 = _latency_stats([c.done - c.sent for c in done])
    series = [sum(col) for col in zip(*(r.per_second for r in results))]
    return Report(
        throughput=len(done) / spec.duration_s if spec.duration_s > 0 else 0.0,
        latency_avg=avg, latency_p50=p50, latency_p99=p99, completed=len(done),
        window=spec.duration_s, series=series,
        config={"protocol": "chain" if cfg.role == "chain" else "ring", "n": cfg.n, "seed": seed,
                **dataclasses.asdict(spec)},
    )


def run_workload(spec: WorkloadSpec, endpoint, seed: int | None = None) -> Report:
    """Measure one closed-loop run; throughput is summed over all clients.

    Without ``seed`` a simulated run uses the scenario's own seed.
    """
    if isinstance(endpoint, Scenario):
        sc = endpoint.replace(workload=spec.to_sim())
        return _from_metrics(run_sim(sc, seed=seed, strict=False), spec, sc)
    return asyncio.run(_run_real(spec, endpoint, seed or 0))


def repeat(spec: WorkloadSpec, endpoint, seeds: Iterable[int] = (0, 1, 2)) -> Report:
    """Average of several runs (one per seed); the per-run throughputs land in ``reps``."""
    runs = [run_workload(spec, endpoint, seed=s) for s in seeds]
    if not runs:
        return Report(config=dataclasses.asdict(spec))
    out = dataclasses.replace(runs[0])
    out.reps = [r.throughput for r in runs]
    out.throughput = statistics.fmean(out.reps)
    out.latency_avg = statistics.fmean(r.latency_avg for r in runs)
    out.latency_p50 = statistics.fmean(r.latency_p50 for r in runs)
    out.latency_p99 = statistics.fmean(r.latency_p99 for r in runs)
    out.completed = sum(r.completed for r in runs)
    if all(r.committed is not None for r in runs):
        out.committed = sum(r.committed for r in runs)
    out.violations = [v for r in runs for v in r.violations]
    return out


@dataclass
class Rung:
    threads: int
    report: Report


@dataclass
class KneeResult:
    rungs: list[Rung]
    knee: int | None
    peak: Report

    @property
    def peak_threads(self) -> int:
        return self.peak.config.get("threads_per_client", 0)


def find_knee(p50s: list[float], factor: float = 2.0) -> int | None:
    """Index of the first rung whose p50 latency is ``factor`` times the previous rung's."""
    for i in range(1, len(p50s)):
        if p50s[i - 1] > 0 and p50s[i] >= factor * p50s[i - 1]:
            return i
    return None


def peak_search(spec: WorkloadSpec, endpoint, ladder: Iterable[int] = (1, 2, 4, 8, 16, 32, 64),
                runner: Callable[[WorkloadSpec, object], Report] | None = None,
                factor: float = 2.0) -> KneeResult:
    """Climb the thread ladder until latency surges.

    The reported peak is the best throughput seen up to and including the
    knee rung; without a knee it is the best over the whole ladder.
    """
    runner = runner or run_workload
    rungs: list[Rung] = []
    knee = None
    for t in ladder:
        rep = runner(spec.with_threads(t), endpoint)
        rungs.append(Rung(t, rep))
        knee = find_knee([r.report.latency_p50 for r in rungs], factor)
        if knee is not None:
            break
    if not rungs:
        raise ValueError("empty thread ladder")
    best = max(rungs, key=lambda r: r.report.throughput)
    return KneeResult(rungs, knee, best.report)


@dataclass
class DecayRow:
    n: int
    peak: float
    latency_avg: float
    latency_p99: float
    threads: int
    normalized: float = 1.0


def sweep(sizes: Iterable[int], spec: WorkloadSpec, endpoint_for: Callable[[int], object],
          ladder: Iterable[int] = (1, 2, 4, 8, 16, 32, 64),
          runner: Callable[[WorkloadSpec, object], Report] | None = None) -> list[DecayRow]:
    """Peak throughput per system size, normalised to the first size."""
    rows = []
    for n in sizes:
        res = peak_search(spec, endpoint_for(n), ladder, runner)
        rows.append(DecayRow(n, res.peak.throughput, res.peak.latency_avg, res.peak.latency_p99,
                             res.peak_threads))
    if rows and rows[0].peak > 0:
        for r in rows:
            r.normalized = r.peak / rows[0].peak
    return rows
