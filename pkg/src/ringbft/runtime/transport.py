"""Framed transport over asyncio streams.

Every connection opens with a fixed handshake::

    b"RBFT" | u8 version | u8 kind | u32 node id | 32-byte config digest

``kind`` is 0 for a replica and 1 for a client. A digest that differs from
ours means the two ends were started from different deployments, and the
connection is refused. After the handshake the stream carries frames in the
:mod:`ringbft.runtime.wire` format.

Replicas send to each other over connections they dial themselves and
receive over connections others dialed. Clients do not listen, so replies to
a client go back on the connection the client opened.
"""

from __future__ import annotations

import asyncio
import logging
import struct
from dataclasses import dataclass, field
from typing import Callable, Hashable

from . import wire

log = logging.getLogger(__name__)

MAGIC = b"RBFT"
VERSION = 1
KIND_REPLICA = 0
KIND_CLIENT = 1
_HELLO = struct.Struct(">4sBBI32s")
HELLO_SIZE = _HELLO.size


class HandshakeError(ConnectionError):
    pass


def encode_hello(kind: int, node_id: int, digest: bytes) -> bytes:
    if len(digest) != 32:
        raise ValueError("config digest must be 32 bytes")
    return _HELLO.pack(MAGIC, VERSION, kind, node_id, digest)


def decode_hello(raw: bytes) -> tuple[int, int, bytes]:
    magic, version, kind, node_id, digest = _HELLO.unpack(raw)
    if magic != MAGIC:
        raise HandshakeError(f"bad magic {magic!r}")
    if version != VERSION:
        raise HandshakeError(f"unsupported version {version}")
    if kind not in (KIND_REPLICA, KIND_CLIENT):
        raise HandshakeError(f"unknown peer kind {kind}")
    return kind, node_id, digest


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


async def read_frames(reader: asyncio.StreamReader, on_frame: Callable, chunk: int = 65536) -> None:
    """Feed decoded frames to ``on_frame`` until EOF; raises FrameError on garbage."""
    dec = wire.FrameDecoder()
    while True:
        data = await reader.read(chunk)
        if not data:
            return
        for msg in dec.iter_feed(data):
            on_frame(msg)


@dataclass
class _Link:
    addr: tuple[str, int]
    queue: asyncio.Queue = field(default_factory=asyncio.Queue)
    task: asyncio.Task | None = None
    connected: bool = False


class Transport:
    """Connections of one node.

    ``deliver(src, msg)`` is called for every inbound frame, in arrival order
    per connection. Sends to a peer that is down are dropped after the
    reconnect attempt fails; the protocol recovers through its own fallback
    paths.
    """

    def __init__(self, node_id: int, kind: int, digest: bytes, peers: dict[int, str],
                 deliver: Callable[[Hashable, object], None], listen: str | None = None,
                 backoff: tuple[float, float] = (0.05, 1.0), max_queue: int = 100_000):
        self.node_id = node_id
        self.kind = kind
        self.digest = digest
        self.peers = {p: parse_addr(a) for p, a in peers.items() if p != node_id}
        self.deliver = deliver
        self.listen = parse_addr(listen) if listen else None
        self.backoff = backoff
        self.max_queue = max_queue
        self.links: dict[int, _Link] = {}
        self.clients: dict[int, asyncio.StreamWriter] = {}
        self.flagged: dict[Hashable, str] = {}
        self.dropped = 0
        self.server: asyncio.base_events.Server | None = None
        self._closing = False
        self._readers: set[asyncio.Task] = set()

    # -- lifecycle ---------------------------------------------------------

    async def start(self) -> None:
        if self.listen is not None:
            self.server = await asyncio.start_server(self._accept, *self.listen)
        for p, addr in self.peers.items():
            link = self.links[p] = _Link(addr)
            link.task = asyncio.ensure_future(self._pump(p, link))

    async def close(self) -> None:
        self._closing = True
        if self.server is not None:
            self.server.close()
        for link in self.links.values():
            if link.task is not None:
                link.task.cancel()
        for t in list(self._readers):
            t.cancel()
        for w in list(self.clients.values()):
            w.close()
        await asyncio.sleep(0)

    # -- outbound ----------------------------------------------------------

    def send(self, dest, msg) -> None:
        if dest == self.node_id:
            return
        link = self.links.get(dest)
        if link is not None:
            if link.queue.qsize() >= self.max_queue:
                self.dropped += 1
                return
            link.queue.put_nowait(wire.encode_frame(msg))
            return
        w = self.clients.get(dest)
        if w is None or w.is_closing():
            self.dropped += 1
            return
        w.write(wire.encode_frame(msg))

    async def _pump(self, peer: int, link: _Link) -> None:
        delay = self.backoff[0]
        while not self._closing:
            try:
                reader, writer = await asyncio.open_connection(*link.addr)
            except OSError:
                # peer unreachable: whatever was queued for it is lost
                self._drain_queue(link)
                await asyncio.sleep(delay)
                delay = min(delay * 2, self.backoff[1])
                continue
            delay = self.backoff[0]
            writer.write(encode_hello(self.kind, self.node_id, self.digest))
            link.connected = True
            if self.kind == KIND_CLIENT:
                task = asyncio.ensure_future(self._read_loop(peer, reader))
                self._readers.add(task)
                task.add_done_callback(self._readers.discard)
            try:
                while True:
                    frame = await link.queue.get()
                    writer.write(frame)
                    while not link.queue.empty():
                        writer.write(link.queue.get_nowait())
                    await writer.drain()
            except (ConnectionError, OSError):
                pass
            finally:
                link.connected = False
                writer.close()

    def _drain_queue(self, link: _Link) -> None:
        while not link.queue.empty():
            link.queue.get_nowait()
            self.dropped += 1

    # -- inbound -----------------------------------------------------------

    async def _accept(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            raw = await reader.readexactly(HELLO_SIZE)
            kind, node_id, digest = decode_hello(raw)
            if digest != self.digest:
                raise HandshakeError(f"config digest mismatch from node {node_id}")
        except (HandshakeError, asyncio.IncompleteReadError, ConnectionError) as exc:
            log.warning("rejecting connection: %s", exc)
            self.flagged[writer.get_extra_info("peername")] = str(exc)
            writer.close()
            return
        if kind == KIND_CLIENT:
            self.clients[node_id] = writer
        try:
            await self._read_loop(node_id, reader)
        finally:
            if self.clients.get(node_id) is writer:
                del self.clients[node_id]
            writer.close()

    async def _read_loop(self, src: int, reader: asyncio.StreamReader) -> None:
        try:
            await read_frames(reader, lambda m: self.deliver(src, m))
        except wire.FrameError as exc:
            log.warning("dropping connection from %s: %s", src, exc)
            self.flagged[src] = str(exc)
        except (ConnectionError, OSError):
            pass
