"""Logical protocol messages shared by the simulator and the real transport.

Every class here has exactly one frame type in :mod:`ringbft.runtime.wire`
(envelopes map to DATA or AGREEMENT depending on their payload).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Union

from .core import MessageId

_VOTE = struct.Struct(">QQIQ32sQI")


@dataclass(frozen=True, slots=True)
class DataMsg:
    entries: tuple[bytes, ...]


@dataclass(frozen=True, slots=True)
class AgreementMsg:
    """A proposal (signer == sequencer) or a confirmation of one.

    ``mark`` is the signer's contiguous stable watermark at signing time
    (-1 when nothing is stable). It is covered by the signature.
    """

    pn: int
    sn: int
    id: MessageId
    hash: bytes
    mark: int
    signer: int
    sig: bytes = b""

    def signing_bytes(self) -> bytes:
        return b"AGR" + _VOTE.pack(self.pn, self.sn, self.id.sender, self.id.ts,
                                   self.hash, self.mark + 1, self.signer)

    @property
    def key(self) -> tuple:
        return (self.pn, self.sn, self.id, self.hash)


Payload = Union[DataMsg, AgreementMsg]


@dataclass(frozen=True, slots=True)
class Envelope:
    id: MessageId
    payload: Payload


@dataclass(frozen=True, slots=True)
class Activate:
    sv: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class Deactivate:
    pass


@dataclass(frozen=True, slots=True)
class SvGossip:
    sv: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class PieceRequest:
    id: MessageId


@dataclass(frozen=True, slots=True)
class Reconfig:
    """RECONFIG: the sender abandons configuration ``pn``.

    ``votes`` holds the sender's latest signed agreement message for every
    sequence number above its stable horizon ``mark``.
    """

    sender: int
    pn: int
    mark: int
    votes: tuple[AgreementMsg, ...]
    sig: bytes = b""

    def signing_bytes(self) -> bytes:
        h = hashlib.sha256()
        h.update(b"RCF" + struct.pack(">IQQI", self.sender, self.pn, self.mark + 1, len(self.votes)))
        for v in self.votes:
            h.update(v.signing_bytes())
            h.update(v.sig)
        return h.digest()


@dataclass(frozen=True, slots=True)
class NewConfig:
    pn: int
    reconfigs: tuple[Reconfig, ...]
    signer: int
    sig: bytes = b""

    def signing_bytes(self) -> bytes:
        h = hashlib.sha256()
        h.update(b"NCF" + struct.pack(">QII", self.pn, self.signer, len(self.reconfigs)))
        for r in self.reconfigs:
            h.update(r.signing_bytes())
            h.update(r.sig)
        return h.digest()


@dataclass(frozen=True, slots=True)
class ChainItem:
    client: int
    req_id: int
    payload: bytes


@dataclass(frozen=True, slots=True)
class ChainSubmit:
    client: int
    req_id: int
    payload: bytes


@dataclass(frozen=True, slots=True)
class ChainForward:
    seq: int
    items: tuple[ChainItem, ...]


@dataclass(frozen=True, slots=True)
class ChainAck:
    seq: int
    req_ids: tuple[int, ...]


# client API
OK = 0
TIMEOUT = 1
NOT_FOUND = 2
REJECTED = 3


@dataclass(frozen=True, slots=True)
class Append:
    req_id: int
    payload: bytes


@dataclass(frozen=True, slots=True)
class AppendReply:
    req_id: int
    status: int
    sn: int
    offset: int


@dataclass(frozen=True, slots=True)
class Read:
    """READ of one log position; ``sn == -1`` asks for the log length."""

    req_id: int
    sn: int


@dataclass(frozen=True, slots=True)
class ReadReply:
    req_id: int
    status: int
    sn: int
    id: MessageId
    entries: tuple[bytes, ...]
