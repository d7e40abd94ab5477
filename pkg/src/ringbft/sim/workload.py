"""Simulated clients: closed-loop load generators and scripted injections."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable

from ..messages import OK, Append, AppendReply, ChainAck, ChainSubmit

START = ("client", "start")


def make_payload(cid: int, req: int, size: int) -> bytes:
    head = b"c%d:r%d:" % (cid, req)
    return head + b"." * max(0, size - len(head))


@dataclass
class Completion:
    req_id: int
    sent: float
    done: float
    target: int
    sn: int = -1


@dataclass
class ClientStats:
    completions: list[Completion] = field(default_factory=list)
    timeouts: int = 0
    issued: int = 0


class ClosedLoopClient:
    """Keeps ``threads`` requests outstanding; each reply immediately triggers the next one."""

    def __init__(self, cid: int, host, protocol: str, pick_target: Callable[[], int], threads: int,
                 request_bytes: int = 250, timeout: float | None = None, start: float = 0.0,
                 stop: float | None = None, ramp: float = 0.0):
        self.cid = cid
        self.host = host
        self.protocol = protocol
        self.pick_target = pick_target
        self.threads = threads
        self.request_bytes = request_bytes
        self.timeout = timeout
        self.stop = stop
        self.stats = ClientStats()
        self.outstanding: dict[int, tuple[float, int]] = {}
        self.next_req = 0
        # threads join one by one over ``ramp`` seconds instead of all at once
        self.ramp = ramp
        self._started = 0
        host.set_timer(START, start)

    def _issue(self) -> None:
        now = self.host.now()
        if self.stop is not None and now >= self.stop:
            return
        req = self.next_req
        self.next_req += 1
        target = self.pick_target()
        payload = make_payload(self.cid, req, self.request_bytes)
        self.outstanding[req] = (now, target)
        self.stats.issued += 1
        if self.protocol == "chain":
            self.host.send(target, ChainSubmit(self.cid, req, payload))
        else:
            self.host.send(target, Append(req, payload))
        if self.timeout is not None:
            self.host.set_timer(("to", req), self.timeout)

    def _complete(self, req: int, sn: int = -1) -> None:
        got = self.outstanding.pop(req, None)
        if got is None:
            return
        if self.timeout is not None:
            self.host.cancel_timer(("to", req))
        self.stats.completions.append(Completion(req, got[0], self.host.now(), got[1], sn))
        self._issue()

    def on_message(self, src, msg) -> None:
        t = type(msg)
        if t is AppendReply:
            if msg.status == OK:
                self._complete(msg.req_id, msg.sn)
        elif t is ChainAck:
            for r in msg.req_ids:
                self._complete(r, msg.seq)

    def on_timer(self, key) -> None:
        if key == START:
            if self.ramp <= 0:
                for _ in range(self.threads):
                    self._issue()
                return
            self._issue()
            self._started += 1
            if self._started < self.threads:
                self.host.set_timer(START, self.ramp / self.threads)
        elif key[0] == "to":
            if self.outstanding.pop(key[1], None) is not None:
                self.stats.timeouts += 1
                self._issue()


@dataclass
class ScriptedOp:
    at: float
    target: int
    payload: bytes


class ScriptedClient:
    """Sends a fixed list of Appends at fixed times and records every reply."""

    def __init__(self, cid: int, host, ops: list[ScriptedOp], protocol: str = "ring"):
        self.cid = cid
        self.host = host
        self.protocol = protocol
        self.ops = list(ops)
        self.sent_at: dict[int, float] = {}
        self.replies: dict[int, tuple[float, int]] = {}
        self.hops: dict[int, int] = {}
        for i, op in enumerate(self.ops):
            host.set_timer(("op", i), op.at)

    def on_timer(self, key) -> None:
        i = key[1]
        op = self.ops[i]
        self.sent_at[i] = self.host.now()
        if self.protocol == "chain":
            self.host.send(op.target, ChainSubmit(self.cid, i, op.payload))
        else:
            self.host.send(op.target, Append(i, op.payload))

    def on_message(self, src, msg) -> None:
        depth = self.host.depth() if hasattr(self.host, "depth") else -1
        if type(msg) is AppendReply and msg.status == OK:
            reqs = (msg.req_id,)
            sn = msg.sn
        elif type(msg) is ChainAck:
            reqs, sn = msg.req_ids, msg.seq
        else:
            return
        for r in reqs:
            if r not in self.replies:
                self.replies[r] = (self.host.now(), sn)
                self.hops[r] = depth

    def latency(self, i: int) -> float | None:
        if i not in self.replies:
            return None
        return self.replies[i][0] - self.sent_at[i]


def target_picker(rule: str, cfg, rng: random.Random, fixed: int = 0, exclude=()) -> Callable[[], int]:
    """Replica selection: sequencer, head, a random replica, or a fixed one."""
    if rule in ("sequencer", "head"):
        r = cfg.at(0)
        return lambda: r
    if rule == "fixed":
        return lambda: fixed
    if rule in ("random", "random-replica"):
        pool = [r for r in range(cfg.n) if r not in set(exclude)] or list(range(cfg.n))
        return lambda: rng.choice(pool)
    raise ValueError(f"unknown target rule {rule!r}")
