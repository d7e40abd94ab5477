"""Deterministic discrete-event engine.

Events are ordered by (virtual time, insertion counter) and every random draw
comes from one seeded generator, so a run is a pure function of its inputs.

Each node is a single-server queue. With a capacity model, handling an input
costs ``cost(input)`` seconds of node time, and every send made by the
handler is then charged in order before it leaves; the node takes its next
input once all of that work is done.
"""

from __future__ import annotations

import heapq
import itertools
import random
from collections import Counter, deque
from dataclasses import dataclass
from typing import Any, Callable, Hashable

from ..messages import Append, ChainSubmit, Envelope
from ..runtime import wire
from .latency import LatencyModel

ARRIVE, TIMER, FREE, CALL = 0, 1, 2, 3


def message_size(msg) -> int:
    size = getattr(msg, "size", None)
    if isinstance(size, int):
        return size
    return wire.frame_size(msg)


@dataclass
class CapacityModel:
    """Node work per message: ``per_message`` seconds plus ``1/bytes_per_second`` per byte.

    A duplicate broadcast envelope is recognised from its header and costs
    only the header bytes. ``send_factor`` scales the cost of outgoing
    messages relative to incoming ones. A client request additionally costs
    ``request_overhead`` byte-equivalents at the node where it enters, for
    authenticating the client and tracking its session.
    """

    bytes_per_second: float = 180_000.0
    per_message: float = 0.0
    send_factor: float = 1.0
    request_overhead: int = 1024

    def cost_bytes(self, nbytes: int) -> float:
        return self.per_message + nbytes / self.bytes_per_second

    def receive_cost(self, node, msg) -> float:
        if type(msg) is Envelope:
            ring = getattr(node, "ring", None)
            if ring is not None and ring.is_duplicate(msg):
                return self.cost_bytes(wire.header_size(msg))
        size = message_size(msg)
        if type(msg) is Append or type(msg) is ChainSubmit:
            size += self.request_overhead
        return self.cost_bytes(size)

    def send_cost(self, msg) -> float:
        return self.send_factor * self.cost_bytes(message_size(msg))


class SimHost:
    """The :class:`ringbft.host.Host` a node sees inside the simulator."""

    __slots__ = ("sim", "slot", "outbox")

    def __init__(self, sim: "Simulator", slot: "NodeSlot"):
        self.sim = sim
        self.slot = slot
        self.outbox: list = []

    def now(self) -> float:
        return self.sim.now

    def send(self, dest, msg) -> None:
        self.outbox.append((dest, msg))

    def set_timer(self, key, delay) -> None:
        self.sim._set_timer(self.slot, key, delay)

    def cancel_timer(self, key) -> None:
        self.slot.timers.pop(key, None)

    def depth(self) -> int:
        """Causal hop count of the event being handled."""
        return self.slot.depth


class NodeSlot:
    __slots__ = ("id", "node", "host", "region", "capacity", "inbox", "busy", "alive",
                 "timers", "depth", "out_filter", "recv", "recv_bytes", "sent", "sent_bytes",
                 "busy_time", "envelopes")

    def __init__(self, nid, region, capacity):
        self.id = nid
        self.node = None
        self.host = None
        self.region = region
        self.capacity = capacity
        self.inbox = deque()
        self.busy = False
        self.alive = True
        self.timers: dict[Hashable, int] = {}
        self.depth = 0
        self.out_filter: Callable | None = None
        self.recv = Counter()
        self.recv_bytes = 0
        self.sent = 0
        self.sent_bytes = 0
        self.busy_time = 0.0
        self.envelopes = 0


class Stop(Exception):
    """Raised inside a handler or hook to end the run early."""


class Simulator:
    def __init__(self, seed: int = 0, latency: LatencyModel | None = None,
                 drop_deliveries: set[int] | None = None, record: bool = False):
        self.seed = seed
        self.rng = random.Random(seed)
        self.latency = latency or LatencyModel.uniform(1.0)
        self.now = 0.0
        self._heap: list = []
        self._seq = itertools.count()
        self._timer_gen = itertools.count()
        self.slots: dict[Hashable, NodeSlot] = {}
        self._last_arrival: dict[tuple, float] = {}
        self.events = 0
        self.deliveries = 0
        self.drop_deliveries = drop_deliveries or set()
        self.record = record
        self.trace: list[tuple] = []
        self.dropped = Counter()

    # -- topology ---------------------------------------------------------------

    def add_node(self, nid: Hashable, factory: Callable[[SimHost], Any], region: str | None = None,
                 capacity: CapacityModel | None = None):
        slot = NodeSlot(nid, region, capacity)
        slot.host = SimHost(self, slot)
        self.slots[nid] = slot
        slot.node = factory(slot.host)
        return slot.node

    def node(self, nid):
        return self.slots[nid].node

    def crash(self, nid) -> None:
        slot = self.slots[nid]
        slot.alive = False
        slot.inbox.clear()
        slot.timers.clear()

    def alive(self, nid) -> bool:
        return self.slots[nid].alive

    # -- scheduling ---------------------------------------------------------------

    def _push(self, at, kind, a=None, b=None, c=None, d=None):
        heapq.heappush(self._heap, (at, next(self._seq), kind, a, b, c, d))

    def call_at(self, at: float, fn: Callable[[], None], nid=None) -> None:
        """Run ``fn`` at virtual time ``at``; with ``nid`` its sends leave from that node."""
        self._push(at, CALL, fn, nid)

    def _set_timer(self, slot: NodeSlot, key, delay: float) -> None:
        gen = next(self._timer_gen)
        slot.timers[key] = gen
        self._push(self.now + max(delay, 0.0), TIMER, slot.id, key, gen, slot.depth)

    def transmit(self, src, dest, msg, depart: float, depth: int) -> None:
        dslot = self.slots.get(dest)
        if dslot is None or not dslot.alive:
            self.dropped["dead"] += 1
            return
        sslot = self.slots[src]
        delay = self.latency.one_way(sslot.region, dslot.region, self.rng)
        key = (src, dest)
        at = depart + delay
        last = self._last_arrival.get(key, 0.0)
        if at < last:
            at = last
        self._last_arrival[key] = at
        self._push(at, ARRIVE, dest, src, msg, depth)

    # -- processing ----------------------------------------------------------------

    def _flush(self, slot: NodeSlot, t: float, depth: int) -> float:
        host = slot.host
        out, host.outbox = host.outbox, []
        cap = slot.capacity
        filt = slot.out_filter
        for dest, msg in out:
            if filt is not None:
                pairs = filt(dest, msg)
            else:
                pairs = ((dest, msg),)
            for d, m in pairs:
                if cap is not None:
                    t += cap.send_cost(m)
                slot.sent += 1
                if d == slot.id:
                    continue
                self.transmit(slot.id, d, m, t, depth + 1)
        return t

    def _process(self, slot: NodeSlot, kind, src, payload, depth) -> None:
        node = slot.node
        slot.depth = depth
        t = self.now
        cap = slot.capacity
        if kind == ARRIVE:
            if cap is not None:
                t += cap.receive_cost(node, payload)
            if type(payload) is Envelope:
                slot.envelopes += 1
            slot.recv[type(payload).__name__] += 1
            node.on_message(src, payload)
        else:
            node.on_timer(payload)
        end = self._flush(slot, t, depth)
        if cap is not None:
            slot.busy_time += end - self.now
            slot.busy = True
            self._push(end, FREE, slot.id)

    def _input(self, slot: NodeSlot, kind, src, payload, depth) -> None:
        if slot.busy:
            slot.inbox.append((kind, src, payload, depth))
        else:
            self._process(slot, kind, src, payload, depth)

    def step(self) -> bool:
        if not self._heap:
            return False
        at, _, kind, a, b, c, d = heapq.heappop(self._heap)
        self.now = at
        self.events += 1
        if kind == ARRIVE:
            ordinal = self.deliveries
            self.deliveries += 1
            if ordinal in self.drop_deliveries:
                self.dropped["injected"] += 1
                return True
            slot = self.slots[a]
            if slot.alive:
                if self.record:
                    self.trace.append((ordinal, at, a, b, type(c).__name__))
                self._input(slot, ARRIVE, b, c, d)
        elif kind == TIMER:
            slot = self.slots[a]
            if slot.alive and slot.timers.get(b) == c:
                del slot.timers[b]
                self._input(slot, TIMER, None, b, d)
        elif kind == FREE:
            slot = self.slots[a]
            slot.busy = False
            if slot.alive and slot.inbox:
                self._process(slot, *slot.inbox.popleft())
        else:
            fn, nid = a, b
            fn()
            if nid is not None:
                slot = self.slots[nid]
                if slot.alive and slot.host.outbox:
                    self._flush(slot, self.now, slot.depth)
        return True

    def run(self, until: float, stop: Callable[[], bool] | None = None, check_every: int = 256) -> float:
        heap = self._heap
        try:
            while heap and heap[0][0] <= until:
                self.step()
                if stop is not None and self.events % check_every == 0 and stop():
                    break
        except Stop:
            pass
        if not heap or heap[0][0] > until:
            self.now = max(self.now, until)
        return self.now
