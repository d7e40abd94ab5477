"""Global invariant checks fed by replica observer hooks."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from ..core import MessageId


class SafetyViolation(AssertionError):
    def __init__(self, kind: str, detail: str, time: float = 0.0, event: int = 0):
        super().__init__(f"{kind} violated at t={time:.6f} (event {event}): {detail}")
        self.kind = kind
        self.detail = detail
        self.time = time
        self.event = event
        self.seed: int | None = None
        self.trace: list = []


@dataclass
class GlobalOracle:
    """Checks the three safety properties over commits at correct replicas.

    * one id per sn across all correct replicas
    * one sn per id across all correct replicas
    * a committed id from a correct sender carries exactly the entries it broadcast

    It also audits that no replica votes in a configuration it is abandoning.
    """

    correct: set
    clock: object = None
    strict: bool = True
    by_sn: dict[int, MessageId] = field(default_factory=dict)
    by_id: dict[MessageId, int] = field(default_factory=dict)
    broadcasts: dict[MessageId, tuple] = field(default_factory=dict)
    violations: list[SafetyViolation] = field(default_factory=list)
    commits: Counter = field(default_factory=Counter)
    reconfigs: Counter = field(default_factory=Counter)
    adopted: dict[int, int] = field(default_factory=dict)
    votes: int = 0
    chain_logs: dict[int, list] = field(default_factory=dict)
    # (time, entries) for each batch committed at the replica that broadcast it
    origin_commits: list = field(default_factory=list)

    def _fail(self, kind, detail):
        now = self.clock.now if self.clock is not None else 0.0
        ev = self.clock.events if self.clock is not None else 0
        v = SafetyViolation(kind, detail, now, ev)
        self.violations.append(v)
        if self.strict:
            raise v

    def on_broadcast(self, rep, mid, entries) -> None:
        if rep.me in self.correct:
            self.broadcasts[mid] = entries

    def on_commit(self, rep, sn, mid, pn, entries) -> None:
        if rep.me not in self.correct:
            return
        self.commits[rep.me] += 1
        if mid.sender == rep.me and self.clock is not None:
            self.origin_commits.append((self.clock.now, len(entries)))
        prev = self.by_sn.setdefault(sn, mid)
        if prev != mid:
            self._fail("agreement", f"sn {sn}: {prev} vs {mid} (replica {rep.me}, pn {pn})")
        psn = self.by_id.setdefault(mid, sn)
        if psn != sn:
            self._fail("no-duplication", f"{mid} at sn {psn} and sn {sn} (replica {rep.me})")
        if mid.sender in self.correct and self.broadcasts.get(mid) != entries:
            self._fail("validity", f"{mid} committed with entries its sender never broadcast")

    def on_vote(self, rep, msg) -> None:
        self.votes += 1
        if rep.me in self.correct and rep.reconfiguring is not None and msg.pn <= rep.reconfiguring:
            self._fail("reconfig-silence", f"replica {rep.me} voted in pn {msg.pn} while leaving "
                                           f"pn {rep.reconfiguring}")

    def on_reconfig(self, rep, pn) -> None:
        self.reconfigs[pn] += 1

    def on_new_config(self, rep, pn) -> None:
        if rep.me in self.correct:
            self.adopted[rep.me] = max(self.adopted.get(rep.me, 0), pn)

    def on_chain_append(self, rep, fwd) -> None:
        self.chain_logs.setdefault(rep.me, []).append(fwd.seq)
        if rep.is_tail and self.clock is not None:
            self.origin_commits.append((self.clock.now, len(fwd.items)))

    @property
    def max_pn(self) -> int:
        return max(self.adopted.values(), default=0)


def check_logs(replicas, correct) -> list[str]:
    """Pairwise comparison of stable logs; returns human-readable conflicts."""
    problems = []
    seen: dict[int, tuple] = {}
    for r in replicas:
        if r.me not in correct:
            continue
        for sn, rec in r.stable.items():
            prev = seen.setdefault(sn, (rec.id, rec.entries, r.me))
            if prev[:2] != (rec.id, rec.entries):
                problems.append(f"sn {sn}: replica {prev[2]} has {prev[0]}, replica {r.me} has {rec.id}")
    return problems


def verify_certificate(rec, cfg, scheme) -> bool:
    """Re-check a stable record's quorum certificate from signatures alone."""
    from ..core import batch_digest

    h = batch_digest(rec.pn, rec.sn, rec.id, rec.entries)
    signers = set()
    for v in rec.certificate:
        if (v.sn, v.id, v.hash, v.pn) != (rec.sn, rec.id, h, rec.pn):
            return False
        if not scheme.verify(v.signer, v.signing_bytes(), v.sig):
            return False
        signers.add(v.signer)
    return len(signers) >= cfg.quorum and len(signers) == len(rec.certificate)


def missing_commits(replicas, correct, payloads) -> dict[int, int]:
    """Per correct replica, how many of ``payloads`` are not in its stable log."""
    want = set(payloads)
    out = {}
    for r in replicas:
        if r.me not in correct:
            continue
        have = set()
        for _, rec in r.stable.items():
            have.update(rec.entries)
        out[r.me] = len(want - have)
    return out
