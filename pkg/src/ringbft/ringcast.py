"""Reliable broadcast over a ring overlay with F fallback predecessors.

Each replica forwards every envelope it delivers to its ring successor and to
any fallback successor that subscribed with ACTIVATE. Fallback predecessors
periodically push their state vector; a replica that sees a fallback
predecessor steadily ahead of it fetches the missing pieces or activates
that link.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable

from .core import MessageId, SystemConfig
from .host import Host
from .messages import Activate, Deactivate, Envelope, PieceRequest, SvGossip

GOSSIP_TIMER = ("ring", "gossip")
OMISSION_TIMER = ("ring", "omission")


@dataclass
class RingParams:
    gossip_interval: float = 0.02
    omission_timeout: float = 0.04
    gap_threshold: int = 1
    buffer_cap: int = 10_000
    resume_window: int = 8
    piece_limit: int = 4
    # a marker whose sender keeps advancing locally is given this many
    # omission timeouts before it counts as stale regardless
    max_extension: int = 16
    # the timeout in force is max(omission_timeout, lag_factor * smoothed lag),
    # where the lag is how long gaps seen in gossip take to close on their own
    lag_factor: float = 3.0
    max_timeout: float = float("inf")

    @classmethod
    def for_delay(cls, max_one_way: float, n: int = 1, **kw) -> "RingParams":
        """Gossip about once per ring traversal; state vectors grow with ``n``."""
        return cls(gossip_interval=max(2, n + 1) * max_one_way, omission_timeout=4 * max_one_way,
                   max_timeout=5 * (n + 1) * max_one_way, **kw)


class _Marker:
    __slots__ = ("target", "since", "created", "base", "tried", "stale")

    def __init__(self, target, now, base):
        self.target = target
        self.since = now
        self.created = now
        self.base = base
        self.tried = False
        self.stale = False


class RingCast:
    """Per-replica broadcast layer.

    ``deliver(id, payload)`` is called exactly once per MessageId, in dense
    timestamp order per sender. Forwarding happens before the callback so a
    message caused by a delivery never overtakes its cause on any link.
    """

    def __init__(self, me: int, cfg: SystemConfig, host: Host,
                 deliver: Callable[[MessageId, object], None],
                 params: RingParams | None = None):
        self.me = me
        self.cfg = cfg
        self.n = cfg.n
        self.host = host
        self.on_deliver = deliver
        self.params = params or RingParams()
        self.succ = cfg.successor(me)
        self.default_pred = cfg.predecessor(me)
        self.fallback_preds = cfg.fallback_predecessors(me)
        self.fallback_succs = cfg.fallback_successors(me)
        self._fallback_pred_set = frozenset(self.fallback_preds)
        self._fallback_succ_set = frozenset(self.fallback_succs)

        self.next_ts = 0
        self.sv = [-1] * self.n
        self.log: list[list[Envelope]] = [[] for _ in range(self.n)]
        self.buffer: list[dict[int, Envelope]] = [dict() for _ in range(self.n)]
        self.buffered = 0
        self.subscribers: list[int] = []
        self.active: dict[int, float] = {}
        self.fallback_sv: dict[int, tuple[int, ...]] = {}
        self.markers: dict[int, _Marker] = {}
        self._default_next: dict[int, int] = {}
        self._streak = 0
        self._gossip_armed = False
        self._gossiped_at = -1
        self._omission_armed = False
        self.lag = 0.0
        self.delivered = 0
        self.counters = Counter()
        self.evidence = Counter()
        self.equivocations: set[MessageId] = set()

    # -- broadcast / delivery ---------------------------------------------

    def ring_broadcast(self, payload) -> MessageId:
        mid = MessageId(self.me, self.next_ts)
        self.next_ts += 1
        self._deliver(Envelope(mid, payload))
        return mid

    def _deliver(self, env: Envelope) -> None:
        j = env.id.sender
        self.sv[j] = env.id.ts
        self.log[j].append(env)
        self.delivered += 1
        send = self.host.send
        send(self.succ, env)
        for s in self.subscribers:
            if s != self.succ:
                send(s, env)
        if not self._gossip_armed and self.fallback_succs:
            self._gossip_armed = True
            self.host.set_timer(GOSSIP_TIMER, self.params.gossip_interval)
        self.on_deliver(env.id, env.payload)

    def is_duplicate(self, env: Envelope) -> bool:
        j, ts = env.id
        return 0 <= j < self.n and ts <= self.sv[j]

    def on_envelope(self, src: int, env: Envelope) -> None:
        j, ts = env.id
        if not 0 <= j < self.n or ts < 0:
            self.evidence[src] += 1
            return
        if src == self.default_pred:
            expect = self._default_next.get(j)
            if expect is not None and ts != expect:
                self.evidence[src] += 1
                self.counters["default_link_gaps"] += 1
                self._streak = 0
            else:
                self._streak += 1
            self._default_next[j] = ts + 1
        cur = self.sv[j]
        if ts <= cur:
            old = self.log[j][ts]
            if old is not env and old.payload != env.payload:
                self._equivocation(src, env.id)
            self.counters["duplicates"] += 1
        elif ts > cur + 1:
            buf = self.buffer[j]
            old = buf.get(ts)
            if old is not None:
                if old is not env and old.payload != env.payload:
                    self._equivocation(src, env.id)
            elif self.buffered < self.params.buffer_cap:
                buf[ts] = env
                self.buffered += 1
            else:
                self.counters["buffer_overflow"] += 1
        else:
            self._deliver(env)
            buf = self.buffer[j]
            while buf:
                nxt = buf.pop(self.sv[j] + 1, None)
                if nxt is None:
                    break
                self.buffered -= 1
                self._deliver(nxt)
        if (self.active and self._streak >= self.params.resume_window
                and src == self.default_pred and not self._any_stale()):
            for p in list(self.active):
                self.deactivate(p)

    def _any_stale(self) -> bool:
        now = self.host.now()
        ot = self.timeout
        return any(now - m.since >= ot for m in self.markers.values())

    def _equivocation(self, src, mid):
        self.equivocations.add(mid)
        self.counters["equivocations"] += 1

    def state_vector(self) -> dict[int, int]:
        return {j: t for j, t in enumerate(self.sv) if t >= 0}

    def delivered_ids(self) -> list[MessageId]:
        return [env.id for per in self.log for env in per]

    # -- state-vector gossip and omission detection -----------------------

    def gossip_state_vector(self) -> None:
        if not self.fallback_succs:
            return
        msg = SvGossip(tuple(self.sv))
        for s in self.fallback_succs:
            self.host.send(s, msg)
        self.counters["gossip_sent"] += len(self.fallback_succs)
        self._gossiped_at = self.delivered

    def on_gossip_timer(self) -> None:
        self._gossip_armed = False
        if self.delivered != self._gossiped_at:
            self.gossip_state_vector()

    def on_sv_gossip(self, src: int, sv: tuple[int, ...]) -> None:
        if src not in self._fallback_pred_set or len(sv) != self.n:
            return
        self.fallback_sv[src] = sv
        now = self.host.now()
        thr = self.params.gap_threshold
        mine = self.sv
        markers = self.markers
        for j in range(self.n):
            t = sv[j]
            if t - mine[j] >= thr:
                m = markers.get(j)
                if m is None:
                    markers[j] = _Marker(t, now, mine[j])
                elif t > m.target:
                    m.target = t
        if markers and not self._omission_armed:
            self._omission_armed = True
            self.host.set_timer(OMISSION_TIMER, self.params.omission_timeout)

    @property
    def timeout(self) -> float:
        """Omission timeout in force, widened when the default path is merely slow."""
        p = self.params
        return max(p.omission_timeout, min(p.max_timeout, p.lag_factor * self.lag))

    def _refresh_markers(self, now: float) -> None:
        ot = self.timeout
        limit = self.params.max_extension * ot
        for j in list(self.markers):
            m = self.markers[j]
            cur = self.sv[j]
            if cur >= m.target:
                del self.markers[j]
                # gaps closed by a fallback fetch count too; the cap on the
                # timeout keeps repeated attacks from inflating it unboundedly
                sample = now - m.created
                self.lag = sample if self.lag == 0.0 else 0.8 * self.lag + 0.2 * sample
            elif cur > m.base and now - m.created < limit:
                m.since = now
                m.base = cur

    def detect_omission(self) -> int | None:
        """Nearest fallback predecessor ahead of us for at least the omission timeout."""
        now = self.host.now()
        self._refresh_markers(now)
        stale = [j for j, m in self.markers.items() if now - m.since >= self.timeout]
        for p in self.fallback_preds:
            sv = self.fallback_sv.get(p)
            if sv and any(sv[j] - self.sv[j] >= self.params.gap_threshold for j in stale):
                return p
        return None

    def on_omission_timer(self) -> None:
        self._omission_armed = False
        now = self.host.now()
        self._refresh_markers(now)
        ot = self.timeout
        stale = [j for j, m in self.markers.items() if now - m.since >= ot]
        for j in stale:
            self.markers[j].stale = True
        if stale:
            self._handle_stale(stale, now)
        if self.markers:
            soonest = min(m.since for m in self.markers.values()) + ot
            self._omission_armed = True
            self.host.set_timer(OMISSION_TIMER, max(soonest - now, ot / 4))

    def _dominating(self, j: int) -> list[int]:
        out = []
        for p in self.fallback_preds:
            sv = self.fallback_sv.get(p)
            if sv and sv[j] > self.sv[j]:
                out.append(p)
        return out

    def _handle_stale(self, stale: list[int], now: float) -> None:
        missing = sum(self.markers[j].target - self.sv[j] for j in stale)
        untried = [j for j in stale if not self.markers[j].tried]
        if not self.active and untried and missing <= self.params.piece_limit:
            for j in untried:
                m = self.markers[j]
                cands = self._dominating(j)
                if not cands:
                    del self.markers[j]
                    continue
                for ts in range(self.sv[j] + 1, m.target + 1):
                    self.request_piece(cands[0], MessageId(j, ts))
                m.tried = True
                m.since = now
            return
        target = None
        for p in self.fallback_preds:
            sv = self.fallback_sv.get(p)
            if p not in self.active and sv and any(sv[j] > self.sv[j] for j in stale):
                target = p
                break
        if target is None:
            # nobody left to ask; forget until fresh gossip shows a gap again
            for j in stale:
                del self.markers[j]
            return
        self.activate_fallback(target)
        for j in stale:
            self.markers[j].since = now

    # -- fallback links -----------------------------------------------------

    def activate_fallback(self, pred: int) -> None:
        if pred not in self._fallback_pred_set:
            raise ValueError(f"{pred} is not a fallback predecessor of {self.me}")
        self.active[pred] = self.host.now()
        self._streak = 0
        self.counters["activations"] += 1
        self.host.send(pred, Activate(tuple(self.sv)))

    def on_activate(self, src: int, sv: tuple[int, ...]) -> None:
        if src not in self._fallback_succ_set or len(sv) != self.n:
            self.evidence[src] += 1
            return
        send = self.host.send
        for j in range(self.n):
            log = self.log[j]
            for ts in range(max(sv[j], -1) + 1, self.sv[j] + 1):
                send(src, log[ts])
        if src not in self.subscribers:
            self.subscribers.append(src)
        self.counters["subscriptions"] += 1

    def deactivate(self, pred: int) -> None:
        if self.active.pop(pred, None) is None:
            return
        self.counters["deactivations"] += 1
        self.host.send(pred, Deactivate())

    def on_deactivate(self, src: int) -> None:
        if src in self.subscribers:
            self.subscribers.remove(src)

    def request_piece(self, pred: int, mid: MessageId) -> None:
        self.counters["piece_requests"] += 1
        self.host.send(pred, PieceRequest(mid))

    def on_piece_request(self, src: int, mid: MessageId) -> None:
        j, ts = mid
        if 0 <= j < self.n and 0 <= ts <= self.sv[j]:
            self.host.send(src, self.log[j][ts])

    def on_timer(self, key) -> bool:
        if key == GOSSIP_TIMER:
            self.on_gossip_timer()
        elif key == OMISSION_TIMER:
            self.on_omission_timer()
        else:
            return False
        return True

    def on_message(self, src, msg) -> bool:
        t = type(msg)
        if t is Envelope:
            self.on_envelope(src, msg)
        elif t is SvGossip:
            self.on_sv_gossip(src, msg.sv)
        elif t is Activate:
            self.on_activate(src, msg.sv)
        elif t is Deactivate:
            self.on_deactivate(src)
        elif t is PieceRequest:
            self.on_piece_request(src, msg.id)
        else:
            return False
        return True
