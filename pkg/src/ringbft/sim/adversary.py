"""Byzantine and crash behaviours, installed as outgoing-message filters.

A faulty replica runs the normal state machine, but everything it sends
passes through a filter that may drop, duplicate, redirect or forge
messages. Timed actions such as crashes or spontaneous broadcasts go
through the simulator clock.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

from ..core import SystemConfig
from ..messages import AgreementMsg, DataMsg, Envelope

KINDS = ("crash", "drop-all", "selective-withhold", "equivocate-timestamps",
         "poisonous-sequencer", "fallback-flood")


@dataclass(frozen=True)
class AdversarySpec:
    kind: str
    members: tuple[int, ...] = ()
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown adversary kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "members", tuple(self.members))

    def check(self, cfg: SystemConfig) -> None:
        if len(set(self.members)) > cfg.f:
            raise ValueError(f"{len(self.members)} faulty members exceed f={cfg.f}")
        if self.kind == "fallback-flood" and self.members:
            pos = {cfg.position(m) for m in self.members}
            k = len(pos)
            # consecutive if some start covers them all, wrapping past the ring's end
            if not any(pos == {(s + i) % cfg.n for i in range(k)} for s in pos):
                raise ValueError("fallback-flood members must be consecutive on the ring")

    @classmethod
    def from_dict(cls, d: dict) -> "AdversarySpec":
        return cls(d["kind"], tuple(d.get("members", ())), dict(d.get("params", {})))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "members": list(self.members), "params": dict(self.params)}


def fallback_flood(cfg: SystemConfig, f: int | None = None, pn: int = 0) -> AdversarySpec:
    """``f`` consecutive replicas right before the sequencer, all aiming at it."""
    f = cfg.f if f is None else f
    if f > cfg.f:
        raise ValueError(f"f={f} exceeds the fault threshold {cfg.f}")
    target = cfg.sequencer(pn)
    members = tuple(cfg.predecessor(target, k) for k in range(f, 0, -1))
    return AdversarySpec("fallback-flood", members, {"target": target})


def cascade(cfg: SystemConfig, k: int, behaviour: str = "crash") -> AdversarySpec:
    """The sequencers of configurations 0..k-1 are faulty."""
    members = tuple(cfg.sequencer(p) for p in range(k))
    return AdversarySpec(behaviour, members)


class _Installer:
    def __init__(self, sim, cfg: SystemConfig, replicas: dict):
        self.sim = sim
        self.cfg = cfg
        self.replicas = replicas

    def chain_filter(self, nid, filt):
        slot = self.sim.slots[nid]
        prev = slot.out_filter
        if prev is None:
            slot.out_filter = filt
        else:
            slot.out_filter = lambda d, m: [p2 for p1 in prev(d, m) for p2 in filt(*p1)]


def install(spec: AdversarySpec, sim, cfg: SystemConfig, replicas: dict) -> None:
    spec.check(cfg)
    ins = _Installer(sim, cfg, replicas)
    handler = _HANDLERS[spec.kind]
    for m in spec.members:
        handler(ins, m, spec.params)


def _crash(ins: _Installer, m: int, params) -> None:
    at = float(params.get("at", 0.0))
    if at <= ins.sim.now:
        ins.sim.crash(m)
    else:
        ins.sim.call_at(at, lambda: ins.sim.crash(m))


def _drop_all(ins: _Installer, m: int, params) -> None:
    until = params.get("until")
    sim = ins.sim

    def filt(dest, msg):
        if type(msg) is Envelope and msg.id.sender != m and (until is None or sim.now < until):
            return ()
        return ((dest, msg),)

    ins.chain_filter(m, filt)


def _selective(ins: _Installer, m: int, params) -> None:
    every = int(params.get("every", 3))
    victim = params.get("victim")

    def filt(dest, msg):
        if (type(msg) is Envelope and msg.id.sender != m and (victim is None or dest == victim)
                and (msg.id.sender * 7919 + msg.id.ts) % every == 0):
            return ()
        return ((dest, msg),)

    ins.chain_filter(m, filt)


def _inject(ins: _Installer, m: int, params, tag: bytes) -> None:
    """Let a faulty replica originate data of its own at a fixed rate."""
    rate = float(params.get("rate", 4.0))
    count = int(params.get("count", 8))
    start = float(params.get("start", 0.0))
    rep = ins.replicas[m]
    for k in range(count):
        payload = tag + b"%d:%d" % (m, k)
        ins.sim.call_at(start + k / rate, lambda p=payload: rep.broadcast_data((p,)), nid=m)


def _equivocate(ins: _Installer, m: int, params) -> None:
    cfg = ins.cfg
    succ = cfg.successor(m)
    # the fork goes straight to replicas further along the ring, so it beats
    # the honest copy there and the ring ends up split
    far = [cfg.successor(m, k) for k in range(2, cfg.n) if cfg.successor(m, k) != m]
    victims = far[: max(1, len(far) // 2)]

    def filt(dest, msg):
        out = [(dest, msg)]
        if (type(msg) is Envelope and msg.id.sender == m and dest == succ
                and type(msg.payload) is DataMsg):
            fork = Envelope(msg.id, DataMsg(msg.payload.entries + (b"#fork",)))
            out.extend((v, fork) for v in victims)
        return out

    ins.chain_filter(m, filt)
    _inject(ins, m, params, b"#eq")


def _poisonous(ins: _Installer, m: int, params) -> None:
    cfg = ins.cfg
    rep = ins.replicas[m]
    succ = cfg.successor(m)
    far = [cfg.successor(m, k) for k in range(2, cfg.n)]
    victims = far[len(far) // 2:] or far

    def filt(dest, msg):
        out = [(dest, msg)]
        if type(msg) is not Envelope or dest != succ or msg.id.sender != m:
            return out
        v = msg.payload
        if type(v) is not AgreementMsg or cfg.sequencer(v.pn) != m:
            return out
        alt_id = next((i for i in reversed(rep.data) if i != v.id), None)
        if alt_id is None:
            return out
        alt = AgreementMsg(v.pn, v.sn, alt_id, rep._digest(v.pn, v.sn, alt_id), v.mark, m)
        alt = dataclasses.replace(alt, sig=rep.scheme.sign(m, alt.signing_bytes()))
        fork = Envelope(msg.id, alt)
        out.extend((d, fork) for d in victims)
        return out

    ins.chain_filter(m, filt)


def _flood(ins: _Installer, m: int, params) -> None:
    target = params.get("target", ins.cfg.sequencer(0))

    def filt(dest, msg):
        if type(msg) is Envelope and dest != target:
            return ((dest, msg), (target, msg))
        return ((dest, msg),)

    ins.chain_filter(m, filt)


_HANDLERS = {
    "crash": _crash,
    "drop-all": _drop_all,
    "selective-withhold": _selective,
    "equivocate-timestamps": _equivocate,
    "poisonous-sequencer": _poisonous,
    "fallback-flood": _flood,
}
