"""Append operation and sequencer-driven two-step agreement over the ring."""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable

from .core import BATCH_CAP, MessageId, SignatureScheme, SystemConfig, batch_digest
from .host import Host
from .messages import (
    OK, NOT_FOUND, AgreementMsg, Append, AppendReply, DataMsg, Read, ReadReply,
)
from .ringcast import RingCast, RingParams

BATCH_TIMER = ("agr", "batch")


class SafetyError(AssertionError):
    """A replica was about to commit two values at one sequence number."""


@dataclass
class PendingRecord:
    id: MessageId
    entries: tuple[bytes, ...]
    since: float


@dataclass(frozen=True)
class StableRecord:
    sn: int
    id: MessageId
    entries: tuple[bytes, ...]
    pn: int
    certificate: tuple[AgreementMsg, ...]


class StableLog:
    """Committed entries by sequence number. Commits may land out of order."""

    def __init__(self):
        self._by_sn: dict[int, StableRecord] = {}
        self._by_id: dict[MessageId, int] = {}
        self.watermark = -1

    def __len__(self):
        return len(self._by_sn)

    def __contains__(self, sn):
        return sn in self._by_sn

    def get(self, sn: int) -> StableRecord | None:
        return self._by_sn.get(sn)

    def sn_of(self, mid: MessageId) -> int | None:
        return self._by_id.get(mid)

    def add(self, rec: StableRecord) -> None:
        old = self._by_sn.get(rec.sn)
        if old is not None:
            if old.id != rec.id:
                raise SafetyError(f"sn {rec.sn}: {old.id} already stable, refusing {rec.id}")
            return
        prev = self._by_id.get(rec.id)
        if prev is not None and prev != rec.sn:
            raise SafetyError(f"{rec.id} already stable at sn {prev}, refusing sn {rec.sn}")
        self._by_sn[rec.sn] = rec
        self._by_id[rec.id] = rec.sn
        while self.watermark + 1 in self._by_sn:
            self.watermark += 1

    def items(self):
        return sorted(self._by_sn.items())

    def max_sn(self) -> int:
        return max(self._by_sn, default=-1)

    def entry_count(self) -> int:
        return sum(len(r.entries) for r in self._by_sn.values())


@dataclass
class ReplicaParams:
    ring: RingParams = field(default_factory=RingParams)
    progress_timeout: float = 0.5
    censor_factor: float = 4.0
    reconfig_factor: float = 2.0
    batch_cap: int = BATCH_CAP
    batch_delay: float = 0.0
    # a partial batch waits (up to batch_hold) while this many of our own
    # batches are still uncommitted, so batches fill up under load
    inflight_cap: int = 2
    batch_hold: float = 0.0
    future_cap: int = 100_000

    @classmethod
    def for_delay(cls, max_one_way: float, n: int, **kw) -> "ReplicaParams":
        """Timers scaled from the largest one-way link delay.

        The progress timeout covers ten worst-case commit paths around the
        ring, since a single Append needs up to 2N+2 link traversals.
        """
        kw.setdefault("batch_hold", (2 * n + 2) * max_one_way)
        return cls(ring=RingParams.for_delay(max_one_way, n),
                   progress_timeout=10 * (2 * n + 2) * max_one_way, **kw)

    def replace(self, **kw) -> "ReplicaParams":
        return dataclasses.replace(self, **kw)


class AgreementCore:
    """Common-case replica: Append batching, proposals, confirmations, commits.

    Reconfiguration lives in :class:`ringbft.reconfig.Replica`, which extends
    this class; use that one to run a replica.
    """

    def __init__(self, me: int, cfg: SystemConfig, host: Host, scheme: SignatureScheme,
                 params: ReplicaParams | None = None, observer=None):
        self.me = me
        self.cfg = cfg
        self.host = host
        self.scheme = scheme
        self.params = params or ReplicaParams()
        self.observer = observer
        self.quorum = cfg.quorum
        self.ring = RingCast(me, cfg, host, self._ring_deliver, self.params.ring)

        self.pn = 0
        self.reconfiguring: int | None = None
        self.in_redo = False
        self.next_sn = 0

        self.data: dict[MessageId, tuple[bytes, ...]] = {}
        self.pending: dict[MessageId, PendingRecord] = {}
        self.proposals: dict[tuple[int, int], AgreementMsg] = {}
        self.assigned: dict[int, dict[MessageId, int]] = {}
        self.votes: dict[tuple[int, int], dict[int, AgreementMsg]] = {}
        self.my_votes: dict[int, AgreementMsg] = {}
        self.stable = StableLog()
        self.marks = [-1] * cfg.n
        self.contested: set[MessageId] = set()

        self._waiting_data: dict[MessageId, list[AgreementMsg]] = {}
        self._deferred: dict[tuple[int, int], list[AgreementMsg]] = {}
        self._future: dict[int, list[AgreementMsg]] = {}
        self._future_count = 0
        self._hashes: dict[tuple[int, int, MessageId], bytes] = {}
        self._batch: list[tuple[Hashable, int, bytes]] = []
        self._batch_armed = False
        self._batch_since = 0.0
        self._waiters: dict[MessageId, list[tuple[Hashable, int, int]]] = {}
        self.evidence = Counter()
        self.commits = 0
        # smoothed time from local delivery of a batch to its local commit
        self.commit_latency = 0.0

    # -- small helpers -------------------------------------------------------

    @property
    def sequencer(self) -> int:
        return self.cfg.sequencer(self.pn)

    def is_sequencer(self) -> bool:
        return self.cfg.sequencer(self.pn) == self.me

    @property
    def watermark(self) -> int:
        return self.stable.watermark

    def horizon(self) -> int:
        """Highest sn known stable at every replica (min of heard watermarks)."""
        self.marks[self.me] = self.stable.watermark
        return min(self.marks)

    def _digest(self, pn: int, sn: int, mid: MessageId) -> bytes:
        key = (pn, sn, mid)
        h = self._hashes.get(key)
        if h is None:
            h = self._hashes[key] = batch_digest(pn, sn, mid, self.data[mid])
        return h

    # -- event entry points --------------------------------------------------

    def on_message(self, src, msg) -> None:
        if self.ring.on_message(src, msg):
            return
        t = type(msg)
        if t is Append:
            self.append(src, msg.req_id, msg.payload)
        elif t is Read:
            self.on_read(src, msg)
        else:
            self.on_other(src, msg)

    def on_other(self, src, msg) -> None:
        self.evidence[src] += 1

    def on_timer(self, key) -> None:
        if self.ring.on_timer(key):
            return
        if key == BATCH_TIMER:
            self._batch_armed = False
            # under load our earlier batches take longer to commit; hold at least that long
            hold = max(self.params.batch_hold, self.commit_latency)
            left = self._batch_since + hold - self.host.now()
            if len(self._waiters) >= self.params.inflight_cap and left > 1e-6:
                self._batch_armed = True
                step = max(self.params.batch_delay, hold / 8)
                self.host.set_timer(BATCH_TIMER, min(left, step))
            else:
                self.flush_batch()

    # -- client API ----------------------------------------------------------

    def append(self, client, req_id: int, payload: bytes) -> None:
        """Queue a client entry; the reply is sent once its batch is stable here."""
        if not self._batch:
            self._batch_since = self.host.now()
        self._batch.append((client, req_id, payload))
        if len(self._batch) >= self.params.batch_cap:
            self.flush_batch()
        elif not self._batch_armed:
            self._batch_armed = True
            self.host.set_timer(BATCH_TIMER, self.params.batch_delay)

    def flush_batch(self) -> MessageId | None:
        if not self._batch:
            return None
        batch, self._batch = self._batch, []
        if self._batch_armed:
            self._batch_armed = False
            self.host.cancel_timer(BATCH_TIMER)
        mid = MessageId(self.me, self.ring.next_ts)
        self._waiters[mid] = [(c, r, i) for i, (c, r, _) in enumerate(batch)]
        return self.broadcast_data(tuple(p for _, _, p in batch))

    def broadcast_data(self, entries: tuple[bytes, ...]) -> MessageId:
        mid = MessageId(self.me, self.ring.next_ts)
        if self.observer is not None:
            self.observer.on_broadcast(self, mid, entries)
        self.ring.ring_broadcast(DataMsg(entries))
        return mid

    def read_log(self, sn: int):
        rec = self.stable.get(sn)
        if rec is None:
            return None
        return rec.entries, rec.id

    def on_read(self, client, msg: Read) -> None:
        if msg.sn < 0:
            self.host.send(client, ReadReply(msg.req_id, OK, len(self.stable), MessageId(0, 0), ()))
            return
        rec = self.stable.get(msg.sn)
        if rec is None:
            self.host.send(client, ReadReply(msg.req_id, NOT_FOUND, msg.sn, MessageId(0, 0), ()))
        else:
            self.host.send(client, ReadReply(msg.req_id, OK, msg.sn, rec.id, rec.entries))

    # -- ring delivery ------------------------------------------------------

    def _ring_deliver(self, mid: MessageId, payload) -> None:
        if type(payload) is DataMsg:
            self.handle_data(mid, payload.entries)
        elif type(payload) is AgreementMsg:
            self.handle_agreement(payload, mid.sender)
        else:
            self.evidence[mid.sender] += 1

    def handle_data(self, mid: MessageId, entries: tuple[bytes, ...]) -> None:
        if mid in self.data:
            return
        self.data[mid] = entries
        if self.stable.sn_of(mid) is None:
            self.pending[mid] = PendingRecord(mid, entries, self.host.now())
            self.on_pending_added(mid)
        stashed = self._waiting_data.pop(mid, None)
        if stashed:
            for m in stashed:
                self._on_agreement(m)
        self.on_data_available(mid)
        if self.is_sequencer() and self.reconfiguring is None and not self.in_redo:
            self.propose(mid)

    def on_pending_added(self, mid: MessageId) -> None:
        pass

    def on_data_available(self, mid: MessageId) -> None:
        pass

    def on_progress(self) -> None:
        pass

    # -- proposing and confirming ---------------------------------------------

    def propose(self, mid: MessageId) -> int | None:
        if mid in self.assigned.get(self.pn, ()) or self.stable.sn_of(mid) is not None:
            return None
        sn = self.next_sn
        self.next_sn += 1
        self.broadcast_vote(self.pn, sn, mid)
        return sn

    def broadcast_vote(self, pn: int, sn: int, mid: MessageId) -> AgreementMsg:
        msg = AgreementMsg(pn, sn, mid, self._digest(pn, sn, mid), self.stable.watermark, self.me)
        msg = dataclasses.replace(msg, sig=self.scheme.sign(self.me, msg.signing_bytes()))
        self.my_votes[sn] = msg
        if self.observer is not None:
            self.observer.on_vote(self, msg)
        self.ring.ring_broadcast(msg)
        return msg

    def handle_agreement(self, msg: AgreementMsg, origin: int) -> None:
        if msg.signer != origin or not 0 <= msg.signer < self.cfg.n:
            self.evidence[origin] += 1
            return
        if not self.scheme.verify(msg.signer, msg.signing_bytes(), msg.sig):
            self.evidence[origin] += 1
            return
        if msg.mark > self.marks[msg.signer]:
            self.marks[msg.signer] = msg.mark
        self._on_agreement(msg)

    def _on_agreement(self, msg: AgreementMsg) -> None:
        pn = msg.pn
        if pn > self.pn:
            if self._future_count < self.params.future_cap:
                self._future.setdefault(pn, []).append(msg)
                self._future_count += 1
            return
        if pn < self.pn or self.reconfiguring is not None:
            return
        if msg.id not in self.data:
            self._waiting_data.setdefault(msg.id, []).append(msg)
            return
        key = (pn, msg.sn)
        seq = self.cfg.sequencer(pn)
        if msg.signer != seq and key not in self.proposals:
            self._deferred.setdefault(key, []).append(msg)
            return
        if not self.validate(msg):
            self.evidence[msg.signer] += 1
            if msg.signer == seq and msg.hash != self._digest(pn, msg.sn, msg.id):
                self.contested.add(msg.id)
            return
        if msg.signer == seq:
            self.proposals[key] = msg
            self.assigned.setdefault(pn, {})[msg.id] = msg.sn
            self._record_vote(key, msg)
            if self.me != seq:
                self.broadcast_vote(pn, msg.sn, msg.id)
            for m in self._deferred.pop(key, ()):
                self._on_agreement(m)
        else:
            self._record_vote(key, msg)

    def validate(self, msg: AgreementMsg) -> bool:
        """All acceptance checks for one agreement message; never raises."""
        try:
            pn, sn, mid = msg.pn, msg.sn, msg.id
            if pn != self.pn or not 0 <= msg.signer < self.cfg.n or sn < 0:
                return False
            if mid not in self.data or msg.hash != self._digest(pn, sn, mid):
                return False
            prior = self.assigned.get(pn, {}).get(mid)
            if prior is not None and prior != sn:
                return False
            stable_sn = self.stable.sn_of(mid)
            if stable_sn is not None and stable_sn != sn:
                return False
            rec = self.stable.get(sn)
            if rec is not None and rec.id != mid:
                return False
            key = (pn, sn)
            prop = self.proposals.get(key)
            if msg.signer == self.cfg.sequencer(pn):
                if prop is not None and prop.key != msg.key:
                    return False
            elif prop is None or prop.key != msg.key:
                return False
            if msg.signer in self.votes.get(key, ()):
                return False
            return self.scheme.verify(msg.signer, msg.signing_bytes(), msg.sig)
        except Exception:
            return False

    def _record_vote(self, key, msg: AgreementMsg) -> None:
        votes = self.votes.setdefault(key, {})
        votes[msg.signer] = msg
        if len(votes) >= self.quorum and msg.sn not in self.stable:
            self.commit(msg.pn, msg.sn, msg.id, tuple(votes.values()))

    def commit(self, pn: int, sn: int, mid: MessageId, cert) -> None:
        entries = self.data[mid]
        self.stable.add(StableRecord(sn, mid, entries, pn, cert))
        self.commits += 1
        rec = self.pending.pop(mid, None)
        if rec is not None:
            sample = self.host.now() - rec.since
            self.commit_latency = sample if self.commits == 1 else 0.9 * self.commit_latency + 0.1 * sample
        if self.observer is not None:
            self.observer.on_commit(self, sn, mid, pn, entries)
        waiters = self._waiters.pop(mid, None)
        if waiters:
            for client, req_id, offset in waiters:
                self.host.send(client, AppendReply(req_id, OK, sn, offset))
            if self._batch and len(self._waiters) < self.params.inflight_cap:
                self.flush_batch()
        self.on_progress()

    # -- configuration bookkeeping -----------------------------------------

    def _enter_config(self, pn: int) -> None:
        """Adopt configuration ``pn`` and replay messages buffered for it."""
        self.pn = pn
        for k in [k for k in self.proposals if k[0] < pn]:
            del self.proposals[k]
        for k in [k for k in self.votes if k[0] < pn]:
            del self.votes[k]
        for k in [k for k in self._deferred if k[0] < pn]:
            del self._deferred[k]
        for p in [p for p in self.assigned if p < pn]:
            del self.assigned[p]
        for p in [p for p in self._future if p < pn]:
            self._future_count -= len(self._future.pop(p))
        for k in [k for k in self._hashes if k[0] < pn]:
            del self._hashes[k]
        replay = self._future.pop(pn, [])
        self._future_count -= len(replay)
        for m in replay:
            self._on_agreement(m)
