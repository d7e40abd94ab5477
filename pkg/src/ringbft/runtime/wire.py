"""Frame codec.

A frame is ``u32 length | u8 type | body`` with ``length`` counting the type
byte and the body. Integers are big-endian; ``-1`` sentinels use signed
64-bit fields. The simulator uses :func:`frame_size` for its cost model and
can replay captured frame logs through :func:`decode_frame`.
"""

from __future__ import annotations

import struct

from ..core import MessageId
from ..messages import (
    Activate, AgreementMsg, Append, AppendReply, ChainAck, ChainForward, ChainItem,
    ChainSubmit, DataMsg, Deactivate, Envelope, NewConfig, PieceRequest, Read,
    ReadReply, Reconfig, SvGossip,
)

MAX_FRAME = 1 << 20

DATA = 0x01
AGREEMENT = 0x02
ACTIVATE = 0x03
DEACTIVATE = 0x04
SV_GOSSIP = 0x05
PIECE_REQUEST = 0x06
RECONFIG = 0x07
NEW_CONFIG = 0x08
CHAIN_SUBMIT = 0x10
CHAIN_FORWARD = 0x11
CHAIN_ACK = 0x12
APPEND = 0x20
APPEND_REPLY = 0x21
READ = 0x22
READ_REPLY = 0x23

FRAME_TYPES = {
    DATA: "DATA", AGREEMENT: "AGREEMENT", ACTIVATE: "ACTIVATE", DEACTIVATE: "DEACTIVATE",
    SV_GOSSIP: "SV-GOSSIP", PIECE_REQUEST: "PIECE-REQUEST", RECONFIG: "RECONFIG",
    NEW_CONFIG: "NEW-CONFIG", CHAIN_SUBMIT: "CHAIN-SUBMIT", CHAIN_FORWARD: "CHAIN-FORWARD",
    CHAIN_ACK: "CHAIN-ACK", APPEND: "APPEND", APPEND_REPLY: "APPEND-REPLY", READ: "READ",
    READ_REPLY: "READ-REPLY",
}

_HDR = struct.Struct(">IB")
_ID = struct.Struct(">IQ")
_VOTE = struct.Struct(">QQIQ32sqI")
_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")


class FrameError(ValueError):
    """Malformed or oversized frame; the connection that produced it is dropped."""


# -- encoding -----------------------------------------------------------------

def _entries(entries) -> bytes:
    out = [_U16.pack(len(entries))]
    for e in entries:
        out.append(_U32.pack(len(e)))
        out.append(e)
    return b"".join(out)


def _vote(v: AgreementMsg) -> bytes:
    if len(v.hash) != 32:
        raise FrameError("agreement hash must be 32 bytes")
    return (_VOTE.pack(v.pn, v.sn, v.id.sender, v.id.ts, v.hash, v.mark, v.signer)
            + _U8.pack(len(v.sig)) + v.sig)


def _sv(sv) -> bytes:
    return _U16.pack(len(sv)) + b"".join(_I64.pack(x) for x in sv)


def _reconfig(r: Reconfig) -> bytes:
    parts = [struct.pack(">IQqI", r.sender, r.pn, r.mark, len(r.votes))]
    parts.extend(_vote(v) for v in r.votes)
    parts.append(_U8.pack(len(r.sig)) + r.sig)
    return b"".join(parts)


def encode_body(msg) -> tuple[int, bytes]:
    t = type(msg)
    if t is Envelope:
        head = _ID.pack(msg.id.sender, msg.id.ts)
        p = msg.payload
        if type(p) is DataMsg:
            return DATA, head + _entries(p.entries)
        return AGREEMENT, head + _vote(p)
    if t is Activate:
        return ACTIVATE, _sv(msg.sv)
    if t is Deactivate:
        return DEACTIVATE, b""
    if t is SvGossip:
        return SV_GOSSIP, _sv(msg.sv)
    if t is PieceRequest:
        return PIECE_REQUEST, _ID.pack(msg.id.sender, msg.id.ts)
    if t is Reconfig:
        return RECONFIG, _reconfig(msg)
    if t is NewConfig:
        parts = [struct.pack(">QIH", msg.pn, msg.signer, len(msg.reconfigs))]
        for r in msg.reconfigs:
            b = _reconfig(r)
            parts.append(_U32.pack(len(b)) + b)
        parts.append(_U8.pack(len(msg.sig)) + msg.sig)
        return NEW_CONFIG, b"".join(parts)
    if t is ChainSubmit:
        return CHAIN_SUBMIT, struct.pack(">IQI", msg.client, msg.req_id, len(msg.payload)) + msg.payload
    if t is ChainForward:
        parts = [struct.pack(">QH", msg.seq, len(msg.items))]
        for it in msg.items:
            parts.append(struct.pack(">IQI", it.client, it.req_id, len(it.payload)) + it.payload)
        return CHAIN_FORWARD, b"".join(parts)
    if t is ChainAck:
        return CHAIN_ACK, struct.pack(">QH", msg.seq, len(msg.req_ids)) + b"".join(
            _U64.pack(r) for r in msg.req_ids)
    if t is Append:
        return APPEND, struct.pack(">QI", msg.req_id, len(msg.payload)) + msg.payload
    if t is AppendReply:
        return APPEND_REPLY, struct.pack(">QBqI", msg.req_id, msg.status, msg.sn, msg.offset)
    if t is Read:
        return READ, struct.pack(">Qq", msg.req_id, msg.sn)
    if t is ReadReply:
        return READ_REPLY, (struct.pack(">QBqIQ", msg.req_id, msg.status, msg.sn, msg.id.sender, msg.id.ts)
                            + _entries(msg.entries))
    raise TypeError(f"no frame type for {t.__name__}")


def encode_frame(msg) -> bytes:
    tag, body = encode_body(msg)
    if len(body) + 1 > MAX_FRAME:
        raise FrameError(f"frame of {len(body) + 1} bytes exceeds {MAX_FRAME}")
    return _HDR.pack(len(body) + 1, tag) + body


# -- decoding -----------------------------------------------------------------

class _Reader:
    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise FrameError("truncated frame body")
        b = self.buf[self.pos:end]
        self.pos = end
        return bytes(b)

    def unpack(self, st: struct.Struct):
        end = self.pos + st.size
        if end > len(self.buf):
            raise FrameError("truncated frame body")
        vals = st.unpack_from(self.buf, self.pos)
        self.pos = end
        return vals

    def u8(self):
        return self.unpack(_U8)[0]

    def u16(self):
        return self.unpack(_U16)[0]

    def u32(self):
        return self.unpack(_U32)[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def done(self):
        if self.pos != len(self.buf):
            raise FrameError("trailing bytes in frame body")


def _read_entries(r: _Reader) -> tuple[bytes, ...]:
    return tuple(r.blob() for _ in range(r.u16()))


def _read_vote(r: _Reader) -> AgreementMsg:
    pn, sn, s, ts, h, mark, signer = r.unpack(_VOTE)
    if mark < -1:
        raise FrameError("bad watermark")
    sig = r.take(r.u8())
    return AgreementMsg(pn, sn, MessageId(s, ts), h, mark, signer, sig)


def _read_sv(r: _Reader) -> tuple[int, ...]:
    n = r.u16()
    sv = tuple(r.unpack(_I64)[0] for _ in range(n))
    if any(x < -1 for x in sv):
        raise FrameError("bad state vector element")
    return sv


def _read_reconfig(r: _Reader) -> Reconfig:
    sender, pn, mark, count = r.unpack(struct.Struct(">IQqI"))
    if count > MAX_FRAME // _VOTE.size:
        raise FrameError("vote count out of range")
    votes = tuple(_read_vote(r) for _ in range(count))
    sig = r.take(r.u8())
    return Reconfig(sender, pn, mark, votes, sig)


def decode_body(tag: int, body: bytes):
    r = _Reader(body)
    if tag == DATA:
        s, ts = r.unpack(_ID)
        msg = Envelope(MessageId(s, ts), DataMsg(_read_entries(r)))
    elif tag == AGREEMENT:
        s, ts = r.unpack(_ID)
        msg = Envelope(MessageId(s, ts), _read_vote(r))
    elif tag == ACTIVATE:
        msg = Activate(_read_sv(r))
    elif tag == DEACTIVATE:
        msg = Deactivate()
    elif tag == SV_GOSSIP:
        msg = SvGossip(_read_sv(r))
    elif tag == PIECE_REQUEST:
        s, ts = r.unpack(_ID)
        msg = PieceRequest(MessageId(s, ts))
    elif tag == RECONFIG:
        msg = _read_reconfig(r)
    elif tag == NEW_CONFIG:
        pn, signer, count = r.unpack(struct.Struct(">QIH"))
        rcs = []
        for _ in range(count):
            sub = _Reader(r.blob())
            rcs.append(_read_reconfig(sub))
            sub.done()
        msg = NewConfig(pn, tuple(rcs), signer, r.take(r.u8()))
    elif tag == CHAIN_SUBMIT:
        client, req = r.unpack(struct.Struct(">IQ"))
        msg = ChainSubmit(client, req, r.blob())
    elif tag == CHAIN_FORWARD:
        seq, count = r.unpack(struct.Struct(">QH"))
        items = []
        for _ in range(count):
            client, req = r.unpack(struct.Struct(">IQ"))
            items.append(ChainItem(client, req, r.blob()))
        msg = ChainForward(seq, tuple(items))
    elif tag == CHAIN_ACK:
        seq, count = r.unpack(struct.Struct(">QH"))
        msg = ChainAck(seq, tuple(r.unpack(_U64)[0] for _ in range(count)))
    elif tag == APPEND:
        (req,) = r.unpack(_U64)
        msg = Append(req, r.blob())
    elif tag == APPEND_REPLY:
        msg = AppendReply(*r.unpack(struct.Struct(">QBqI")))
    elif tag == READ:
        msg = Read(*r.unpack(struct.Struct(">Qq")))
    elif tag == READ_REPLY:
        req, status, sn, s, ts = r.unpack(struct.Struct(">QBqIQ"))
        msg = ReadReply(req, status, sn, MessageId(s, ts), _read_entries(r))
    else:
        raise FrameError(f"unknown frame type 0x{tag:02x}")
    r.done()
    return msg


def decode_frame(buf: bytes):
    """Decode exactly one complete frame."""
    if len(buf) < _HDR.size:
        raise FrameError("short frame")
    length, tag = _HDR.unpack_from(buf)
    if length < 1 or length > MAX_FRAME:
        raise FrameError(f"bad frame length {length}")
    if len(buf) != 4 + length:
        raise FrameError("length prefix does not match frame size")
    return decode_body(tag, buf[5:])


class FrameDecoder:
    """Incremental decoder for a byte stream."""

    def __init__(self, max_frame: int = MAX_FRAME):
        self.max_frame = max_frame
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        return list(self.iter_feed(data))

    def iter_feed(self, data: bytes):
        """Like :meth:`feed`, yielding each frame before looking at the next one."""
        self._buf += data
        while len(self._buf) >= 4:
            (length,) = _U32.unpack_from(self._buf)
            if length < 1 or length > self.max_frame:
                raise FrameError(f"bad frame length {length}")
            if len(self._buf) < 4 + length:
                break
            tag = self._buf[4]
            body = bytes(self._buf[5:4 + length])
            del self._buf[:4 + length]
            yield decode_body(tag, body)


def iter_frames(blob: bytes):
    """Decode a captured frame log (concatenated frames)."""
    dec = FrameDecoder()
    yield from dec.feed(blob)
    if dec._buf:
        raise FrameError("trailing partial frame in log")


# -- sizes --------------------------------------------------------------------

_VOTE_FIXED = _VOTE.size + 1


def frame_size(msg) -> int:
    """``len(encode_frame(msg))`` without building the bytes."""
    t = type(msg)
    if t is Envelope:
        p = msg.payload
        if type(p) is DataMsg:
            return 5 + 12 + 2 + sum(4 + len(e) for e in p.entries)
        return 5 + 12 + _VOTE_FIXED + len(p.sig)
    if t is Activate or t is SvGossip:
        return 5 + 2 + 8 * len(msg.sv)
    if t is Deactivate:
        return 5
    if t is PieceRequest:
        return 5 + 12
    if t is Reconfig:
        return 5 + _reconfig_size(msg)
    if t is NewConfig:
        return 5 + 14 + sum(4 + _reconfig_size(r) for r in msg.reconfigs) + 1 + len(msg.sig)
    if t is ChainSubmit:
        return 5 + 16 + len(msg.payload)
    if t is ChainForward:
        return 5 + 10 + sum(16 + len(i.payload) for i in msg.items)
    if t is ChainAck:
        return 5 + 10 + 8 * len(msg.req_ids)
    if t is Append:
        return 5 + 12 + len(msg.payload)
    if t is AppendReply:
        return 5 + 21
    if t is Read:
        return 5 + 16
    if t is ReadReply:
        return 5 + 29 + 2 + sum(4 + len(e) for e in msg.entries)
    raise TypeError(f"no frame type for {t.__name__}")


def _reconfig_size(r: Reconfig) -> int:
    return 24 + sum(_VOTE_FIXED + len(v.sig) for v in r.votes) + 1 + len(r.sig)


def header_size(msg) -> int:
    """Bytes a receiver must parse to recognise a duplicate envelope."""
    return 5 + 12 if type(msg) is Envelope else frame_size(msg)
