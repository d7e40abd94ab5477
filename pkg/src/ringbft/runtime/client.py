"""Asyncio client for a running deployment."""

from __future__ import annotations

import asyncio
import random
import time
from dataclasses import dataclass, field

from ..messages import OK, Append, AppendReply, ChainAck, ChainSubmit, Read, ReadReply
from ..sim.workload import ClientStats, Completion, make_payload
from .node import NodeConfig
from .transport import KIND_CLIENT, Transport


@dataclass
class LoadSpec:
    threads: int = 1
    request_bytes: int = 250
    duration: float = 30.0
    warmup: float = 15.0
    cooldown: float = 15.0
    target: str = "random"
    fixed: int = 0
    timeout: float = 5.0


@dataclass
class LoadResult:
    stats: ClientStats
    start: float
    window: tuple[float, float]
    failovers: int = 0
    per_second: list[int] = field(default_factory=list)

    def in_window(self) -> list[Completion]:
        lo, hi = self.window
        return [c for c in self.stats.completions if lo <= c.done < hi]


class Client:
    """Talks to every replica over its own connections; one id per client process."""

    def __init__(self, cfg: NodeConfig, client_id: int | None = None):
        self.cfg = cfg
        self.id = client_id if client_id is not None else cfg.n + cfg.id
        if self.id < cfg.n:
            raise ValueError("client ids must not collide with replica ids")
        self.chain = cfg.role == "chain"
        self.transport = Transport(self.id, KIND_CLIENT, cfg.digest(), dict(enumerate(cfg.peers)),
                                   self._deliver)
        self._next = 0
        self._waiting: dict[int, asyncio.Future] = {}
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    async def start(self) -> None:
        await self.transport.start()

    async def close(self) -> None:
        await self.transport.close()

    async def __aenter__(self):
        await self.start()
        return self

    async def __aexit__(self, *exc):
        await self.close()

    def _deliver(self, src, msg) -> None:
        t = type(msg)
        if t is AppendReply or t is ReadReply:
            fut = self._waiting.pop(msg.req_id, None)
            if fut is not None and not fut.done():
                fut.set_result(msg)
        elif t is ChainAck:
            for r in msg.req_ids:
                fut = self._waiting.pop(r, None)
                if fut is not None and not fut.done():
                    fut.set_result(msg)

    def _request(self, target: int, make) -> tuple[int, asyncio.Future]:
        req = self._next
        self._next += 1
        fut = asyncio.get_running_loop().create_future()
        self._waiting[req] = fut
        self.transport.send(target, make(req))
        return req, fut

    async def _await(self, req, fut, timeout):
        try:
            return await asyncio.wait_for(fut, timeout)
        except asyncio.TimeoutError:
            self._waiting.pop(req, None)
            return None

    async def append(self, payload: bytes, target: int = 0, timeout: float = 5.0):
        """Submit one entry; returns the reply, or None on timeout."""
        if self.chain:
            req, fut = self._request(target, lambda r: ChainSubmit(self.id, r, payload))
        else:
            req, fut = self._request(target, lambda r: Append(r, payload))
        return await self._await(req, fut, timeout)

    async def read(self, sn: int, target: int = 0, timeout: float = 5.0) -> ReadReply | None:
        """Entry at ``sn``, or the log length with ``sn=-1``."""
        req, fut = self._request(target, lambda r: Read(r, sn))
        return await self._await(req, fut, timeout)

    def _pick(self, spec: LoadSpec, rng: random.Random, avoid: set[int]) -> int:
        cfg = self.cfg
        system = cfg.system()
        if self.chain or spec.target in ("head", "sequencer"):
            return system.at(0)
        if spec.target == "fixed" and spec.fixed not in avoid:
            return spec.fixed
        pool = [r for r in range(cfg.n) if r not in avoid] or list(range(cfg.n))
        return rng.choice(pool)

    async def closed_loop(self, spec: LoadSpec, seed: int = 0) -> LoadResult:
        """``spec.threads`` loops, each with one outstanding request.

        A loop whose request times out while its replica is unreachable moves
        to another replica and stops using that one for the rest of the run.
        """
        rng = random.Random(seed)
        stats = ClientStats()
        start = self.now()
        end = start + spec.warmup + spec.duration + spec.cooldown
        avoid: set[int] = set()
        failovers = 0

        async def loop(k: int):
            nonlocal failovers
            i = 0
            target = self._pick(spec, rng, avoid)
            while self.now() < end:
                payload = make_payload(self.id, k * 1_000_000 + i, spec.request_bytes)
                i += 1
                sent = self.now()
                stats.issued += 1
                reply = await self.append(payload, target, spec.timeout)
                ok = reply is not None and (type(reply) is ChainAck or reply.status == OK)
                if ok:
                    sn = reply.seq if type(reply) is ChainAck else reply.sn
                    stats.completions.append(Completion(i, sent, self.now(), target, sn))
                else:
                    stats.timeouts += 1
                    link = self.transport.links.get(target)
                    if not self.chain and (link is None or not link.connected):
                        avoid.add(target)
                        failovers += 1
                        target = self._pick(spec, rng, avoid)

        await asyncio.gather(*(loop(k) for k in range(spec.threads)))
        window = (start + spec.warmup, start + spec.warmup + spec.duration)
        res = LoadResult(stats, start, window, failovers)
        buckets = [0] * max(1, int(spec.duration + 0.999))
        for c in res.in_window():
            buckets[min(len(buckets) - 1, int(c.done - window[0]))] += 1
        res.per_second = buckets
        return res
