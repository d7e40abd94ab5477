"""Scenario description, one simulated run, and violation trace minimisation."""

from __future__ import annotations

import dataclasses
import json
import random
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..agreement import ReplicaParams
from ..chain import ChainParams, ChainReplica
from ..core import SystemConfig, make_scheme
from ..reconfig import Replica
from ..ringcast import RingParams
from .adversary import AdversarySpec, install
from .engine import CapacityModel, Simulator
from .latency import CLIENT_REGION, LatencyModel, place_replicas
from .oracle import GlobalOracle, SafetyViolation, check_logs, missing_commits
from .workload import ClosedLoopClient, ScriptedClient, ScriptedOp, target_picker


@dataclass
class WorkloadConfig:
    kind: str = "closed"
    clients: int = 10
    threads: int = 1
    request_bytes: int = 250
    target: str = "random"
    fixed: int = 0
    duration: float = 30.0
    warmup: float = 15.0
    cooldown: float = 15.0
    timeout: float | None = None
    # thread start-up spread; None means half the warmup
    ramp: float | None = None
    # scripted workloads: (time, replica, payload)
    ops: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadConfig":
        d = dict(d)
        if "ops" in d:
            d["ops"] = [tuple(o) for o in d["ops"]]
        return cls(**d)


@dataclass
class Scenario:
    protocol: str = "ring"
    n: int = 6
    latency: Any = "regions"
    jitter: float = 0.05
    capacity: dict | None = None
    placement: str = "tour"
    adversaries: list = field(default_factory=list)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    timers: dict = field(default_factory=dict)
    batch_delay: float = 0.0
    scheme: str = "tag"
    end: float | None = None
    seed: int = 0
    quorum_override: int | None = None
    record: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        if "workload" in d and isinstance(d["workload"], dict):
            d["workload"] = WorkloadConfig.from_dict(d["workload"])
        d["adversaries"] = [a if isinstance(a, AdversarySpec) else AdversarySpec.from_dict(a)
                            for a in d.get("adversaries", [])]
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["adversaries"] = [a.to_dict() for a in self.adversaries]
        d["workload"]["ops"] = [[t, r, p.decode("latin-1") if isinstance(p, bytes) else p]
                                for t, r, p in self.workload.ops]
        return d

    def replace(self, **kw) -> "Scenario":
        return dataclasses.replace(self, **kw)


def load_scenario(path: str) -> Scenario:
    """Read a scenario from a JSON or YAML file."""
    with open(path) as fh:
        text = fh.read()
    if path.endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return Scenario.from_dict(data)


@dataclass
class RunMetrics:
    protocol: str
    n: int
    f: int
    seed: int
    sim_time: float = 0.0
    events: int = 0
    window: tuple[float, float] = (0.0, 0.0)
    completed: int = 0
    throughput: float = 0.0
    latency_avg: float = 0.0
    latency_p50: float = 0.0
    latency_p99: float = 0.0
    series: list = field(default_factory=list)
    per_replica: dict = field(default_factory=dict)
    hops: list = field(default_factory=list)
    reconfigurations: int = 0
    reconfigs_started: int = 0
    commits: dict = field(default_factory=dict)
    committed_entries: int = 0
    violations: list = field(default_factory=list)
    missing: dict = field(default_factory=dict)
    timeouts: int = 0
    # entries committed inside the window, counted replica-side
    committed_in_window: int = 0
    scripted_latency: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def live(self) -> bool:
        return not any(self.missing.values())


@dataclass
class SimRun:
    scenario: Scenario
    sim: Simulator
    cfg: SystemConfig
    replicas: dict
    clients: list
    oracle: GlobalOracle
    correct: set
    payloads: list
    horizon: float


def _latency(sc: Scenario) -> LatencyModel:
    if sc.latency == "regions":
        return LatencyModel(jitter=sc.jitter)
    if isinstance(sc.latency, dict):
        return LatencyModel.uniform(float(sc.latency["uniform_ms"]), sc.jitter)
    return LatencyModel.uniform(float(sc.latency), sc.jitter)


def replica_params(sc: Scenario, n: int, max_delay: float) -> ReplicaParams:
    p = ReplicaParams.for_delay(max_delay, n, batch_delay=sc.batch_delay)
    ring_over = {k: v for k, v in sc.timers.items() if k in RingParams.__dataclass_fields__}
    rep_over = {k: v for k, v in sc.timers.items() if k in ReplicaParams.__dataclass_fields__}
    if ring_over:
        p.ring = dataclasses.replace(p.ring, **ring_over)
    return dataclasses.replace(p, **rep_over)


def build(sc: Scenario, seed: int | None = None, drop_deliveries=None) -> SimRun:
    seed = sc.seed if seed is None else seed
    latency = _latency(sc)
    sim = Simulator(seed=seed, latency=latency, drop_deliveries=drop_deliveries, record=sc.record)
    rng = random.Random(sim.rng.getrandbits(64))
    placement = place_replicas(sc.n, seed=seed, mode=sc.placement)
    if sc.protocol == "ring":
        cfg = SystemConfig.ring(sc.n, ring_order=placement.order, region_of=placement.region_of)
    elif sc.protocol == "chain":
        cfg = SystemConfig.chain(sc.n, ring_order=placement.order, region_of=placement.region_of)
    else:
        raise ValueError(f"unknown protocol {sc.protocol!r}")
    members = {m for a in sc.adversaries for m in a.members}
    correct = set(range(sc.n)) - members
    oracle = GlobalOracle(correct=correct, clock=sim)
    capacity = CapacityModel(**sc.capacity) if sc.capacity is not None else None
    max_delay = latency.max_one_way(list(placement.region_of) + [CLIENT_REGION])
    params = replica_params(sc, sc.n, max_delay)
    if sc.quorum_override is not None:
        cfg_q = sc.quorum_override
    else:
        cfg_q = None
    scheme = make_scheme(sc.scheme, seed=b"sim-%d" % seed, n=sc.n)
    replicas = {}
    for r in range(sc.n):
        region = placement.region_of[r]
        if sc.protocol == "ring":
            def factory(host, r=r):
                rep = Replica(r, cfg, host, scheme, params, observer=oracle)
                if cfg_q is not None:
                    rep.quorum = cfg_q
                return rep
        else:
            def factory(host, r=r):
                return ChainReplica(r, cfg, host, ChainParams(batch_delay=sc.batch_delay), observer=oracle)
        replicas[r] = sim.add_node(r, factory, region=region, capacity=capacity)
    for spec in sc.adversaries:
        install(spec, sim, cfg, replicas)

    wl = sc.workload
    clients = []
    payloads = []
    bound = (2 * sc.n + 2) * max_delay
    if wl.kind == "closed":
        stop = wl.warmup + wl.duration + wl.cooldown
        exclude = members if wl.target in ("random", "random-replica") else ()
        for k in range(wl.clients):
            cid = sc.n + k
            pick = target_picker("head" if sc.protocol == "chain" else wl.target, cfg, rng, wl.fixed, exclude)
            clients.append(sim.add_node(
                cid, lambda host, cid=cid, pick=pick: ClosedLoopClient(
                    cid, host, sc.protocol, pick, wl.threads, wl.request_bytes, wl.timeout, 0.0, stop,
                    wl.warmup / 2 if wl.ramp is None else wl.ramp),
                region=CLIENT_REGION))
        horizon = sc.end if sc.end is not None else stop
    elif wl.kind == "script":
        ops = [ScriptedOp(float(t), int(r), p if isinstance(p, bytes) else str(p).encode())
               for t, r, p in wl.ops]
        cid = sc.n
        clients.append(sim.add_node(cid, lambda host: ScriptedClient(cid, host, ops, sc.protocol),
                                    region=CLIENT_REGION))
        payloads = [op.payload for op in ops if op.target in correct]
        last = max((op.at for op in ops), default=0.0)
        slack = 10 * bound
        if members and sc.protocol == "ring":
            pt = params.progress_timeout
            rt = params.reconfig_factor * pt
            slack += sum(pt * params.censor_factor + rt * 2 ** k for k in range(cfg.f + 1)) * 2
        horizon = sc.end if sc.end is not None else last + slack
    else:
        raise ValueError(f"unknown workload kind {wl.kind!r}")
    return SimRun(sc, sim, cfg, replicas, clients, oracle, correct, payloads, horizon)


def _watch_done(run: SimRun):
    want = set(run.payloads)
    if not want:
        return None
    # stop once every correct, live replica holds every scripted payload
    counts = {r: 0 for r in run.correct}
    oracle = run.oracle
    orig = oracle.on_commit

    def on_commit(rep, sn, mid, pn, entries):
        orig(rep, sn, mid, pn, entries)
        if rep.me in counts:
            counts[rep.me] += sum(1 for e in entries if e in want)

    oracle.on_commit = on_commit
    if run.scenario.protocol == "chain":
        tail = run.cfg.at(run.cfg.n - 1)
        client = run.clients[0]
        return lambda: len(client.replies) >= len(want) and run.sim.alive(tail)
    return lambda: all(c >= len(want) for r, c in counts.items() if run.sim.alive(r))


def collect(run: SimRun) -> RunMetrics:
    sc, sim, cfg = run.scenario, run.sim, run.cfg
    m = RunMetrics(sc.protocol, cfg.n, cfg.f, sim.seed, sim_time=sim.now, events=sim.events)
    wl = sc.workload
    lat = []
    if wl.kind == "closed":
        lo, hi = wl.warmup, wl.warmup + wl.duration
        m.window = (lo, hi)
        buckets = [0] * max(1, int(np.ceil(wl.duration)))
        for c in run.clients:
            m.timeouts += c.stats.timeouts
            for comp in c.stats.completions:
                if lo <= comp.done < hi:
                    lat.append(comp.done - comp.sent)
                    buckets[min(len(buckets) - 1, int(comp.done - lo))] += 1
        m.completed = len(lat)
        m.throughput = m.completed / wl.duration if wl.duration > 0 else 0.0
        m.series = buckets
        m.committed_in_window = sum(k for t, k in run.oracle.origin_commits if lo <= t < hi)
    else:
        client = run.clients[0]
        for i in sorted(client.replies):
            lat.append(client.latency(i))
        m.scripted_latency = [client.latency(i) for i in range(len(client.ops))]
        m.hops = [client.hops.get(i) for i in range(len(client.ops))]
    if lat:
        arr = np.asarray(lat)
        m.latency_avg = float(arr.mean())
        m.latency_p50 = float(np.percentile(arr, 50))
        m.latency_p99 = float(np.percentile(arr, 99))
    for r, rep in run.replicas.items():
        slot = sim.slots[r]
        row = {"envelopes": slot.envelopes, "received": sum(slot.recv.values()), "sent": slot.sent,
               "busy": slot.busy_time / sim.now if sim.now > 0 else 0.0, "alive": slot.alive}
        ring = getattr(rep, "ring", None)
        if ring is not None:
            row["delivered"] = ring.delivered
            row.update({k: v for k, v in sorted(ring.counters.items())})
            row["stable"] = len(rep.stable)
            row["pn"] = rep.pn
            m.commits[r] = len(rep.stable)
            m.reconfigs_started += rep.reconfigs_started
        else:
            row["log"] = len(rep.log)
            m.commits[r] = len(rep.log)
        m.per_replica[r] = row
    m.reconfigurations = run.oracle.max_pn
    m.violations = [str(v) for v in run.oracle.violations]
    if sc.protocol == "ring":
        m.violations += check_logs(run.replicas.values(), run.correct)
        live = {r for r in run.correct if sim.alive(r)}
        m.missing = missing_commits(run.replicas.values(), live, run.payloads)
        m.committed_entries = max((run.replicas[r].stable.entry_count() for r in live), default=0)
    elif run.payloads:
        client = run.clients[0]
        m.missing = {cfg.at(cfg.n - 1): sum(1 for i, op in enumerate(client.ops) if i not in client.replies)}
    return m


def run_sim(scenario: Scenario | dict, adversary=None, workload=None, seed: int | None = None,
            drop_deliveries=None, strict: bool = True, early_stop: bool = True) -> RunMetrics:
    """Run one deterministic simulation and return its metrics.

    With ``strict`` a safety violation raises :class:`SafetyViolation`
    carrying the seed and event index.
    """
    sc = scenario if isinstance(scenario, Scenario) else Scenario.from_dict(scenario)
    if adversary is not None:
        sc = sc.replace(adversaries=list(adversary) if isinstance(adversary, (list, tuple)) else [adversary])
    if workload is not None:
        sc = sc.replace(workload=workload)
    run = build(sc, seed, drop_deliveries)
    run.oracle.strict = strict
    done = _watch_done(run) if early_stop else None
    try:
        run.sim.run(run.horizon, stop=done, check_every=1)
    except SafetyViolation as v:
        v.seed = run.sim.seed
        v.trace = list(run.sim.trace)
        raise
    return collect(run)


@dataclass
class MinimizedTrace:
    violation: SafetyViolation
    dropped: set
    trace: list
    original_events: int


def _reproduce(sc: Scenario, seed: int, drops: set) -> SafetyViolation | None:
    try:
        run_sim(sc.replace(record=True), seed=seed, drop_deliveries=drops, early_stop=False)
    except SafetyViolation as v:
        return v
    return None


def minimize_trace(sc: Scenario, seed: int | None = None, max_runs: int = 400) -> MinimizedTrace | None:
    """Greedy delta debugging over message deliveries.

    Repeatedly drops chunks of deliveries (halving the chunk size) and keeps
    every drop under which some safety property still fails. Returns None if
    the scenario does not violate safety in the first place.
    """
    seed = sc.seed if seed is None else seed
    v = _reproduce(sc, seed, set())
    if v is None:
        return None
    original = len(v.trace)
    dropped: set[int] = set()
    runs = 0
    chunk = max(1, len(v.trace) // 2)
    while chunk >= 1 and runs < max_runs:
        live = [e[0] for e in v.trace if e[0] not in dropped]
        progressed = False
        for i in range(0, len(live), chunk):
            if runs >= max_runs:
                break
            trial = dropped | set(live[i:i + chunk])
            runs += 1
            w = _reproduce(sc, seed, trial)
            if w is not None:
                dropped, v, progressed = trial, w, True
        if not progressed:
            chunk //= 2
    return MinimizedTrace(v, dropped, v.trace, original)
