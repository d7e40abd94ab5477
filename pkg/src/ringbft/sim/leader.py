"""Leader-centric dissemination, used only as a decay-shape reference.

A leader orders batches and pushes each one to every follower, after which
all replicas exchange two all-to-all vote rounds. The leader therefore
handles about 3N messages per batch and sends N-1 full copies of the data,
which is what makes its throughput fall off roughly as 1/N.

Clients attach to random replicas, as in the ring runs; a follower relays
the requests it receives to the leader in batches.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from ..core import BATCH_CAP, MessageId
from ..messages import OK, AgreementMsg, Append, AppendReply, Envelope
from ..runtime import wire
from .engine import CapacityModel, Simulator
from .latency import CLIENT_REGION, LatencyModel, place_replicas
from .workload import ClosedLoopClient

# a vote costs as much as one ring agreement envelope
VOTE_BYTES = wire.frame_size(Envelope(MessageId(0, 0), AgreementMsg(0, 0, MessageId(0, 0), bytes(32), 0, 0, bytes(32))))
HEADER_BYTES = 17
ENTRY_OVERHEAD = 4
BATCH_TIMER = ("leader", "batch")


@dataclass(frozen=True)
class Relay:
    entries: tuple
    size: int


@dataclass(frozen=True)
class Propose:
    sn: int
    entries: tuple
    size: int


@dataclass(frozen=True)
class Vote:
    sn: int
    phase: int
    size: int = VOTE_BYTES


def _batch_size(entries) -> int:
    return HEADER_BYTES + 16 + sum(len(p) + ENTRY_OVERHEAD for _, _, _, p in entries)


class LeaderNode:
    """One replica of the reference protocol (replica 0 leads)."""

    def __init__(self, me: int, n: int, host, batch_delay: float = 0.005):
        self.me = me
        self.n = n
        self.host = host
        self.quorum = n - (n - 1) // 3
        self.batch_delay = batch_delay
        self.batch: list = []
        self.armed = False
        self.next_sn = 0
        self.votes: dict[tuple[int, int], int] = {}
        self.sent_phase: set[tuple[int, int]] = set()
        self.waiting: dict[int, list] = {}
        self.committed = 0

    @property
    def leader(self) -> bool:
        return self.me == 0

    def on_message(self, src, msg) -> None:
        t = type(msg)
        if t is Append:
            self.batch.append((self.me, src, msg.req_id, msg.payload))
            self._maybe_flush()
        elif t is Relay:
            self.batch.extend(msg.entries)
            self._maybe_flush()
        elif t is Propose:
            self.waiting[msg.sn] = [e for e in msg.entries if e[0] == self.me]
            self._vote(msg.sn, 1)
        elif t is Vote:
            key = (msg.sn, msg.phase)
            c = self.votes[key] = self.votes.get(key, 0) + 1
            if c + 1 >= self.quorum:
                if msg.phase == 1:
                    self._vote(msg.sn, 2)
                elif (msg.sn, 3) not in self.sent_phase:
                    self.sent_phase.add((msg.sn, 3))
                    self._commit(msg.sn)

    def _maybe_flush(self) -> None:
        if len(self.batch) >= BATCH_CAP:
            self._flush()
        elif not self.armed:
            self.armed = True
            self.host.set_timer(BATCH_TIMER, self.batch_delay)

    def on_timer(self, key) -> None:
        self.armed = False
        self._flush()

    def _flush(self) -> None:
        while self.batch:
            chunk, self.batch = tuple(self.batch[:BATCH_CAP]), self.batch[BATCH_CAP:]
            if not self.leader:
                self.host.send(0, Relay(chunk, _batch_size(chunk)))
                continue
            sn = self.next_sn
            self.next_sn += 1
            prop = Propose(sn, chunk, _batch_size(chunk))
            for r in range(1, self.n):
                self.host.send(r, prop)
            self.waiting[sn] = [e for e in chunk if e[0] == self.me]
            self._vote(sn, 1)
            if len(self.batch) < BATCH_CAP:
                break
        if self.batch and not self.armed:
            self.armed = True
            self.host.set_timer(BATCH_TIMER, self.batch_delay)

    def _vote(self, sn: int, phase: int) -> None:
        if (sn, phase) in self.sent_phase:
            return
        self.sent_phase.add((sn, phase))
        v = Vote(sn, phase)
        for r in range(self.n):
            if r != self.me:
                self.host.send(r, v)

    def _commit(self, sn: int) -> None:
        self.committed += 1
        for _, client, req, _ in self.waiting.pop(sn, ()):
            self.host.send(client, AppendReply(req, OK, sn, 0))


@dataclass
class LeaderResult:
    n: int
    throughput: float
    latency_avg: float
    leader_busy: float
    per_node_received: dict = field(default_factory=dict)


def leader_broadcast_model(n: int, capacity: CapacityModel | dict | None = None, *, seed: int = 0,
                           latency_ms: float = 10.0, jitter: float = 0.05, clients: int = 10,
                           threads: int | None = None, duration: float = 3.0, warmup: float = 2.0,
                           request_bytes: int = 250, placement: str = "uniform") -> LeaderResult:
    """Closed-loop throughput of the leader reference protocol with ``n`` replicas.

    ``placement="random"`` spreads replicas over the measured regions at
    random instead of using a uniform link delay.
    """
    if n < 3:
        raise ValueError("the leader model needs n >= 3")
    if capacity is None:
        capacity = CapacityModel()
    elif isinstance(capacity, dict):
        capacity = CapacityModel(**capacity)
    if placement == "random":
        place = place_replicas(n, seed=seed, mode="random")
        regions = place.region_of
        latency = LatencyModel(jitter=jitter)
    else:
        regions = {r: CLIENT_REGION for r in range(n)}
        latency = LatencyModel.uniform(latency_ms, jitter)
    sim = Simulator(seed=seed, latency=latency)
    nodes = [sim.add_node(r, lambda h, r=r: LeaderNode(r, n, h), region=regions[r], capacity=capacity)
             for r in range(n)]
    rng = random.Random(seed)
    threads = threads if threads is not None else max(2, n // 2)
    stop = warmup + duration
    cl = [sim.add_node(n + k, lambda h, cid=n + k: ClosedLoopClient(
        cid, h, "ring", lambda: rng.randrange(n), threads, request_bytes, None, 0.0, stop),
        region=CLIENT_REGION) for k in range(clients)]
    sim.run(stop)
    lat = [c.done - c.sent for cli in cl for c in cli.stats.completions if warmup <= c.done < stop]
    slot = sim.slots[0]
    return LeaderResult(
        n=n,
        throughput=len(lat) / duration,
        latency_avg=float(np.mean(lat)) if lat else 0.0,
        leader_busy=slot.busy_time / sim.now if sim.now else 0.0,
        per_node_received={r: sum(sim.slots[r].recv.values()) for r in range(n)},
    )


def fit_decay_exponent(ns, throughputs) -> float:
    """Least-squares slope of log(throughput) against log(n)."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(throughputs, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
