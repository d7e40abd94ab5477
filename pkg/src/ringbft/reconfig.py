"""Sequencer replacement: RECONFIG / NEW-CONFIG, vouching and redo."""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable

from .agreement import AgreementCore, ReplicaParams
from .core import MessageId, SignatureScheme, SystemConfig
from .host import Host
from .messages import NewConfig, PieceRequest, Reconfig

PROGRESS_TIMER = ("rc", "progress")
RECONFIG_TIMER = ("rc", "reconfig")


def supports_for(sn: int, reconfigs: Iterable[Reconfig]) -> Counter:
    """How many reporters carry a vote for each id at ``sn``."""
    c = Counter()
    for rc in reconfigs:
        for v in rc.votes:
            if v.sn == sn:
                c[v.id] += 1
                break
    return c


def vouch(sn: int, reconfigs: Iterable[Reconfig], f: int) -> tuple[MessageId, int, int]:
    """Return ``(id, case, support)`` for ``sn``.

    An id is vouched for when no other id reaches 2f+1 supports. A unique
    vouched id is case 1; otherwise (none, or several) the smallest proposed
    id wins and the case is 2.
    """
    sup = supports_for(sn, reconfigs)
    if not sup:
        raise ValueError(f"sn {sn} does not occur in the reconfiguration set")
    strong = [i for i, c in sup.items() if c >= 2 * f + 1]
    vouched = [i for i in sup if all(o == i for o in strong)]
    if len(vouched) == 1:
        return vouched[0], 1, sup[vouched[0]]
    pick = min(sup)
    return pick, 2, sup[pick]


def vouched_choice(sn: int, reconfigs: Iterable[Reconfig], f: int) -> MessageId:
    return vouch(sn, list(reconfigs), f)[0]


def verify_reconfig(rc: Reconfig, cfg: SystemConfig, scheme: SignatureScheme) -> bool:
    try:
        if not 0 <= rc.sender < cfg.n or rc.pn < 0:
            return False
        if not scheme.verify(rc.sender, rc.signing_bytes(), rc.sig):
            return False
        seen = set()
        for v in rc.votes:
            if v.signer != rc.sender or v.pn > rc.pn or v.sn <= rc.mark or v.sn in seen:
                return False
            seen.add(v.sn)
            if not scheme.verify(v.signer, v.signing_bytes(), v.sig):
                return False
        return True
    except Exception:
        return False


def verify_new_config(nc: NewConfig, cfg: SystemConfig, scheme: SignatureScheme) -> bool:
    """Checkable by anyone: signer, signature and 4f+1 distinct valid RECONFIGs."""
    try:
        if nc.signer != cfg.sequencer(nc.pn + 1):
            return False
        if not scheme.verify(nc.signer, nc.signing_bytes(), nc.sig):
            return False
        senders = {rc.sender for rc in nc.reconfigs}
        if len(senders) != len(nc.reconfigs) or len(senders) < cfg.quorum:
            return False
        return all(rc.pn == nc.pn and verify_reconfig(rc, cfg, scheme) for rc in nc.reconfigs)
    except Exception:
        return False


@dataclass
class RedoPlan:
    horizon: int
    # (sn, id) in sn order; id None means fill the slot with an empty batch
    slots: list[tuple[int, MessageId | None]]
    resume: int


def plan_redo(reconfigs: list[Reconfig], f: int, stable_id: Callable[[int], MessageId | None],
              stable_sn: Callable[[MessageId], int | None], has_data: Callable[[MessageId], bool],
              local_max: int = -1) -> RedoPlan:
    """Decide what the new sequencer re-proposes for each reported sn.

    Slots already stable locally keep their id. Other slots follow the
    vouching rule, except that an id may appear at only one slot: the
    stronger claim keeps it and the loser falls back to another proposed id
    or an empty batch.
    """
    marks = sorted((rc.mark for rc in reconfigs), reverse=True)
    horizon = marks[f] if len(marks) > f else -1
    reported = {v.sn for rc in reconfigs for v in rc.votes if v.sn > horizon}
    resume = max([horizon, local_max] + list(reported)) + 1
    # every slot up to the resume point gets a value so the stable prefix has no holes
    sns = range(horizon + 1, resume)

    claims = []
    for sn in sns:
        sid = stable_id(sn)
        if sid is not None:
            claims.append((0, 0, sn, sid, None))
            continue
        if sn not in reported:
            claims.append((3, 0, sn, None, {}))
            continue
        mid, case, support = vouch(sn, reconfigs, f)
        rank = 1 if case == 1 and support >= 2 * f + 1 else 2
        claims.append((rank, -support, sn, mid, supports_for(sn, reconfigs)))
    claims.sort(key=lambda c: (c[0], c[1], c[2]))

    used: dict[MessageId, int] = {}
    chosen: dict[int, MessageId | None] = {}

    def free(mid, sn):
        s = stable_sn(mid)
        return mid not in used and (s is None or s == sn)

    # primary claims first, so a losing slot's fallback never takes an id
    # that a later slot holds by its own vouching
    losers = []
    for rank, neg, sn, mid, sup in claims:
        pick = None
        if rank == 0:
            pick = mid
        elif rank != 3:
            if free(mid, sn) and (has_data(mid) or -neg >= f + 1):
                pick = mid
            else:
                losers.append((sn, mid, sup))
        chosen[sn] = pick
        if pick is not None:
            used[pick] = sn
    primary = {c[3] for c in claims if c[0] in (1, 2)}
    for sn, mid, sup in losers:
        for alt in sorted(sup):
            if alt != mid and alt not in primary and free(alt, sn) and has_data(alt):
                chosen[sn] = alt
                used[alt] = sn
                break
    return RedoPlan(horizon, [(sn, chosen[sn]) for sn in sns], resume)


class Replica(AgreementCore):
    """A full ring replica: broadcast, agreement and sequencer replacement."""

    def __init__(self, me: int, cfg: SystemConfig, host: Host, scheme: SignatureScheme,
                 params: ReplicaParams | None = None, observer=None):
        super().__init__(me, cfg, host, scheme, params, observer)
        self.last_progress = host.now()
        # each configuration gets a full censorship window of its own
        self.config_since = host.now()
        self._progress_armed = False
        self.failures = 0
        self.rc_msgs: dict[int, dict[int, Reconfig]] = {}
        self.announced: set[int] = set()
        self.redo: list[tuple[int, MessageId | None]] = []
        self.reconfigs_started = 0
        self.configs_adopted = 0
        self.last_plan: RedoPlan | None = None
        self.last_new_config: NewConfig | None = None

    # -- progress monitoring -------------------------------------------------

    def _watched(self):
        eq = self.ring.equivocations
        for rec in self.pending.values():
            if rec.id not in self.contested and rec.id not in eq:
                yield rec

    def on_pending_added(self, mid: MessageId) -> None:
        if len(self.pending) == 1:
            self.last_progress = max(self.last_progress, self.host.now())
        self._arm_progress()

    def on_progress(self) -> None:
        self.last_progress = self.host.now()

    def _arm_progress(self, delay: float | None = None) -> None:
        if self._progress_armed or self.reconfiguring is not None:
            return
        self._progress_armed = True
        self.host.set_timer(PROGRESS_TIMER, self.params.progress_timeout if delay is None else delay)

    def on_progress_timer(self) -> None:
        self._progress_armed = False
        if self.reconfiguring is not None:
            return
        oldest = next(self._watched(), None)
        if oldest is None:
            return
        now = self.host.now()
        pt = self.params.progress_timeout
        # under heavy load everything waits longer; only an entry far slower
        # than its peers counts as censored
        ct = self.params.censor_factor * max(pt, self.commit_latency)
        ref = max(self.last_progress, oldest.since)
        since = max(oldest.since, self.config_since)
        if now - ref >= pt or now - since >= ct:
            self.maybe_start_reconfig(self.pn)
            return
        wait = min(ref + pt, since + ct) - now
        self._arm_progress(max(wait, pt / 20))

    # -- reconfiguration ------------------------------------------------------

    def maybe_start_reconfig(self, pn: int) -> bool:
        """Abandon configuration ``pn`` (and everything below it)."""
        if pn < self.pn or (self.reconfiguring is not None and self.reconfiguring >= pn):
            return False
        self.reconfiguring = pn
        self.in_redo = False
        self.redo = []
        if self._progress_armed:
            self._progress_armed = False
            self.host.cancel_timer(PROGRESS_TIMER)
        mark = self.horizon()
        votes = tuple(v for sn, v in sorted(self.my_votes.items()) if sn > mark)
        rc = Reconfig(self.me, pn, mark, votes)
        rc = dataclasses.replace(rc, sig=self.scheme.sign(self.me, rc.signing_bytes()))
        self.reconfigs_started += 1
        if self.observer is not None:
            self.observer.on_reconfig(self, pn)
        for r in range(self.cfg.n):
            if r != self.me:
                self.host.send(r, rc)
        delay = self.params.reconfig_factor * self.params.progress_timeout * (2 ** self.failures)
        self.host.set_timer(RECONFIG_TIMER, delay)
        self.on_reconfig_msg(self.me, rc)
        return True

    def on_reconfig_timer(self) -> None:
        if self.reconfiguring is None:
            return
        self.failures += 1
        self.maybe_start_reconfig(self.reconfiguring + 1)

    def on_reconfig_msg(self, src, rc: Reconfig) -> None:
        if src != rc.sender:
            return
        if rc.pn < self.pn:
            # a straggler still abandoning an old configuration: hand it the way forward
            nc = self.last_new_config
            if nc is not None and nc.pn >= rc.pn and src != self.me:
                self.host.send(src, nc)
            return
        got = self.rc_msgs.setdefault(rc.pn, {})
        if rc.sender in got:
            return
        if src != self.me and not verify_reconfig(rc, self.cfg, self.scheme):
            self.evidence[src] += 1
            return
        got[rc.sender] = rc
        others = sum(1 for s in got if s != self.me)
        if others >= self.cfg.f + 1 and (self.reconfiguring is None or self.reconfiguring < rc.pn):
            self.maybe_start_reconfig(rc.pn)
        self.collect_and_announce(rc.pn)

    def collect_and_announce(self, pn: int) -> NewConfig | None:
        if (self.cfg.sequencer(pn + 1) != self.me or self.reconfiguring != pn
                or pn in self.announced):
            return None
        got = self.rc_msgs.get(pn, {})
        if self.me not in got or len(got) < self.quorum:
            return None
        others = sorted(s for s in got if s != self.me)[: self.quorum - 1]
        chosen = tuple(got[s] for s in sorted(others + [self.me]))
        nc = NewConfig(pn, chosen, self.me)
        nc = dataclasses.replace(nc, sig=self.scheme.sign(self.me, nc.signing_bytes()))
        self.announced.add(pn)
        for r in range(self.cfg.n):
            if r != self.me:
                self.host.send(r, nc)
        self.apply_new_config(nc)
        return nc

    def on_new_config(self, src, nc: NewConfig) -> None:
        if nc.pn + 1 <= self.pn:
            return
        if not verify_new_config(nc, self.cfg, self.scheme):
            self.evidence[src] += 1
            return
        self.apply_new_config(nc)

    def apply_new_config(self, nc: NewConfig) -> None:
        if nc.pn + 1 <= self.pn:
            return
        self.host.cancel_timer(RECONFIG_TIMER)
        self.reconfiguring = None
        self.failures = 0
        self.configs_adopted += 1
        self.last_new_config = nc
        self.last_progress = self.config_since = self.host.now()
        for p in [p for p in self.rc_msgs if p <= nc.pn]:
            del self.rc_msgs[p]
        if self.observer is not None:
            self.observer.on_new_config(self, nc.pn + 1)
        if self.cfg.sequencer(nc.pn + 1) == self.me:
            self.in_redo = True
        self._enter_config(nc.pn + 1)
        if self.in_redo:
            self.redo_pending(list(nc.reconfigs))
        if self.pending:
            self._arm_progress()

    def redo_pending(self, reconfigs: list[Reconfig]) -> None:
        plan = plan_redo(reconfigs, self.cfg.f, lambda sn: self.stable.get(sn) and self.stable.get(sn).id,
                         self.stable.sn_of, self.data.__contains__, self.stable.max_sn())
        self.last_plan = plan
        self.redo = list(plan.slots)
        self.next_sn = plan.resume
        self.in_redo = True
        self._advance_redo()

    def _advance_redo(self) -> None:
        while self.redo:
            sn, mid = self.redo[0]
            if mid is None:
                self.redo.pop(0)
                mid = self.broadcast_data(())
            elif mid not in self.data:
                for p in self.ring.fallback_preds + [self.ring.default_pred]:
                    self.host.send(p, PieceRequest(mid))
                return
            else:
                self.redo.pop(0)
            self.assigned.setdefault(self.pn, {})[mid] = sn
            self.broadcast_vote(self.pn, sn, mid)
        self.in_redo = False
        for mid in list(self.pending):
            if self.reconfiguring is not None or self.in_redo:
                break
            self.propose(mid)

    def on_data_available(self, mid: MessageId) -> None:
        if self.in_redo and self.redo and self.redo[0][1] == mid and self.reconfiguring is None:
            self._advance_redo()

    # -- dispatch --------------------------------------------------------------

    def on_other(self, src, msg) -> None:
        t = type(msg)
        if t is Reconfig:
            self.on_reconfig_msg(src, msg)
        elif t is NewConfig:
            self.on_new_config(src, msg)
        else:
            self.evidence[src] += 1

    def on_timer(self, key) -> None:
        if key == PROGRESS_TIMER:
            self.on_progress_timer()
        elif key == RECONFIG_TIMER:
            self.on_reconfig_timer()
        else:
            super().on_timer(key)
