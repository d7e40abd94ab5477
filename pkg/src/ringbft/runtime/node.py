"""Replica process harness.

A deployment file (YAML or JSON) lists every replica address in ring order
plus the settings all replicas must agree on; :class:`NodeConfig` picks one
replica out of it. Settings that only affect the local process, the timers,
may be overridden per process with environment variables::

    RINGBFT_TIMER_<FIELD>=<seconds or count>

where ``<FIELD>`` is any field of :class:`ringbft.ringcast.RingParams` or
:class:`ringbft.agreement.ReplicaParams` in upper case, for example
``RINGBFT_TIMER_PROGRESS_TIMEOUT=4`` or ``RINGBFT_TIMER_GOSSIP_INTERVAL=0.2``.
"""

from __future__ import annotations

import asyncio
import dataclasses
import hashlib
import json
import logging
import os
import signal
import sys
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable

from ..agreement import ReplicaParams
from ..chain import ChainParams, ChainReplica
from ..core import ConfigError, SystemConfig, make_scheme
from ..reconfig import Replica
from ..ringcast import RingParams
from .transport import KIND_REPLICA, Transport

log = logging.getLogger(__name__)

ENV_PREFIX = "RINGBFT_TIMER_"
ROLES = ("ring", "chain", "client")


@dataclass
class NodeConfig:
    id: int
    peers: list[str]
    f: int
    role: str = "ring"
    listen: str | None = None
    ring_order: list[int] | None = None
    timers: dict = field(default_factory=dict)
    region: str = "local"
    scheme: str = "ed25519"
    key_seed: str = "ringbft-dev"
    # assumed bound on one-way delay, from which default timers are derived
    max_delay: float = 0.02
    batch_delay: float = 0.002
    status_interval: float = 0.5

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"unknown role {self.role!r}")
        if self.role != "client" and not 0 <= self.id < len(self.peers):
            raise ConfigError(f"replica id {self.id} outside 0..{len(self.peers) - 1}")
        if self.listen is None and self.role != "client":
            self.listen = self.peers[self.id]

    @property
    def n(self) -> int:
        return len(self.peers)

    def system(self) -> SystemConfig:
        order = tuple(self.ring_order) if self.ring_order else ()
        protocol = "chain" if self.role == "chain" else "ring"
        if protocol == "chain":
            return SystemConfig(n=self.n, f=self.f, ring_order=order, protocol="chain")
        return SystemConfig(n=self.n, f=self.f, ring_order=order)

    def digest(self) -> bytes:
        """Hash of everything replicas must agree on; exchanged in the handshake."""
        shared = {
            "peers": list(self.peers),
            "f": self.f,
            "protocol": "chain" if self.role == "chain" else "ring",
            "ring_order": list(self.ring_order or range(self.n)),
            "scheme": self.scheme,
            "key_seed": self.key_seed,
        }
        return hashlib.sha256(json.dumps(shared, sort_keys=True).encode()).digest()

    @classmethod
    def from_deployment(cls, data: dict, node_id: int, role: str | None = None) -> "NodeConfig":
        keep = {k: v for k, v in data.items() if k in cls.__dataclass_fields__ and k != "id"}
        if role is not None:
            keep["role"] = role
        keep.pop("listen", None)
        return cls(id=node_id, **keep)

    @classmethod
    def load(cls, path: str, node_id: int, role: str | None = None) -> "NodeConfig":
        return cls.from_deployment(load_deployment(path), node_id, role)


def load_deployment(path: str) -> dict:
    with open(path) as fh:
        text = fh.read()
    if path.endswith((".yaml", ".yml")):
        import yaml

        return yaml.safe_load(text)
    return json.loads(text)


def env_timer_overrides(environ=None) -> dict[str, float]:
    environ = os.environ if environ is None else environ
    known = set(RingParams.__dataclass_fields__) | set(ReplicaParams.__dataclass_fields__)
    out = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX):].lower()
        if name not in known or name == "ring":
            raise ConfigError(f"unknown timer override {key}")
        out[name] = float(raw)
    return out


def replica_params(cfg: NodeConfig, environ=None) -> ReplicaParams:
    params = ReplicaParams.for_delay(cfg.max_delay, cfg.n, batch_delay=cfg.batch_delay)
    over = {**cfg.timers, **env_timer_overrides(environ)}
    ring_kw = {k: v for k, v in over.items() if k in RingParams.__dataclass_fields__}
    rep_kw = {k: v for k, v in over.items() if k in ReplicaParams.__dataclass_fields__ and k != "ring"}
    for k in ("gap_threshold", "buffer_cap", "resume_window", "piece_limit", "max_extension"):
        if k in ring_kw:
            ring_kw[k] = int(ring_kw[k])
    for k in ("batch_cap", "future_cap", "inflight_cap"):
        if k in rep_kw:
            rep_kw[k] = int(rep_kw[k])
    if ring_kw:
        params.ring = dataclasses.replace(params.ring, **ring_kw)
    return dataclasses.replace(params, **rep_kw)


class ReentrancyError(RuntimeError):
    pass


class EventLoopHost:
    """:class:`ringbft.host.Host` on a monotonic clock.

    Inbound frames and timer expiries are queued as events and handed to the
    state machine one at a time by :meth:`run`.
    """

    def __init__(self, loop: asyncio.AbstractEventLoop):
        self.loop = loop
        self.transport: Transport | None = None
        self.events: asyncio.Queue = asyncio.Queue()
        self._timers: dict[Hashable, asyncio.TimerHandle] = {}
        self._t0 = time.monotonic()
        self._busy = False
        self.handled = 0

    def now(self) -> float:
        return time.monotonic() - self._t0

    def send(self, dest, msg) -> None:
        self.transport.send(dest, msg)

    def set_timer(self, key, delay) -> None:
        old = self._timers.pop(key, None)
        if old is not None:
            old.cancel()
        self._timers[key] = self.loop.call_later(max(delay, 0.0), self._fire, key)

    def cancel_timer(self, key) -> None:
        h = self._timers.pop(key, None)
        if h is not None:
            h.cancel()

    def _fire(self, key) -> None:
        self._timers.pop(key, None)
        self.events.put_nowait(("timer", None, key))

    def post(self, src, msg) -> None:
        self.events.put_nowait(("msg", src, msg))

    def dispatch(self, node, kind, src, payload) -> None:
        if self._busy:
            raise ReentrancyError("state machine re-entered while handling an event")
        self._busy = True
        try:
            if kind == "msg":
                node.on_message(src, payload)
            else:
                node.on_timer(payload)
            self.handled += 1
        finally:
            self._busy = False

    async def run(self, node) -> None:
        while True:
            kind, src, payload = await self.events.get()
            try:
                self.dispatch(node, kind, src, payload)
            except ReentrancyError:
                raise
            except Exception:
                log.exception("handler failed on %s from %s", kind, src)


def build_state_machine(cfg: NodeConfig, host, environ=None):
    system = cfg.system()
    if cfg.role == "chain":
        return ChainReplica(cfg.id, system, host, ChainParams(batch_delay=cfg.batch_delay))
    scheme = make_scheme(cfg.scheme, seed=cfg.key_seed.encode(), n=cfg.n)
    return Replica(cfg.id, system, host, scheme, replica_params(cfg, environ))


def status_record(cfg: NodeConfig, node, host: EventLoopHost) -> dict[str, Any]:
    rec = {"id": cfg.id, "t": round(host.now(), 3), "events": host.handled}
    if isinstance(node, Replica):
        rec.update(stable=len(node.stable), entries=node.stable.entry_count(), pn=node.pn,
                   reconfigs_started=node.reconfigs_started, pending=len(node.pending),
                   activations=node.ring.counters.get("activations", 0))
    else:
        rec.update(log=len(node.log))
    return rec


async def run_replica(cfg: NodeConfig, status: Callable[[dict], None] | None = None,
                      stop: asyncio.Event | None = None, environ=None) -> None:
    """Serve one replica until ``stop`` is set (or forever)."""
    if cfg.role == "client":
        raise ConfigError("run_replica needs a ring or chain role")
    loop = asyncio.get_running_loop()
    host = EventLoopHost(loop)
    node = build_state_machine(cfg, host, environ)
    transport = Transport(cfg.id, KIND_REPLICA, cfg.digest(), dict(enumerate(cfg.peers)), host.post,
                          listen=cfg.listen)
    host.transport = transport
    await transport.start()
    log.info("replica %d listening on %s", cfg.id, cfg.listen)
    runner = asyncio.ensure_future(host.run(node))

    async def report():
        while True:
            await asyncio.sleep(cfg.status_interval)
            if status is not None:
                status(status_record(cfg, node, host))

    reporter = asyncio.ensure_future(report())
    stop = stop or asyncio.Event()
    try:
        waiters = [asyncio.ensure_future(stop.wait()), runner]
        await asyncio.wait(waiters, return_when=asyncio.FIRST_COMPLETED)
        if runner.done() and runner.exception() is not None:
            raise runner.exception()
    finally:
        reporter.cancel()
        runner.cancel()
        await transport.close()


def print_status(rec: dict) -> None:
    sys.stdout.write(json.dumps(rec) + "\n")
    sys.stdout.flush()


def serve(cfg: NodeConfig) -> None:
    """Blocking entry point used by the CLI; SIGTERM and SIGINT stop cleanly."""

    async def main():
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGTERM, signal.SIGINT):
            try:
                loop.add_signal_handler(sig, stop.set)
            except NotImplementedError:
                pass
        await run_replica(cfg, status=print_status, stop=stop)

    asyncio.run(main())
