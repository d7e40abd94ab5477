"""Random message generators covering every frame type."""

import random

from ringbft.core import MessageId
from ringbft.messages import (
    Activate, AgreementMsg, Append, AppendReply, ChainAck, ChainForward, ChainItem, ChainSubmit,
    DataMsg, Deactivate, Envelope, NewConfig, PieceRequest, Read, ReadReply, Reconfig, SvGossip,
)

U32 = 2**32 - 1
U64 = 2**64 - 1
I64 = 2**63 - 1


def _bytes(rng, hi=64):
    return rng.randbytes(rng.randint(0, hi))


def _mid(rng):
    return MessageId(rng.randint(0, U32), rng.randint(0, U64))


def _vote(rng):
    return AgreementMsg(rng.randint(0, U64), rng.randint(0, U64), _mid(rng), rng.randbytes(32),
                        rng.randint(-1, I64), rng.randint(0, U32), _bytes(rng, 80))


def _sv(rng):
    return tuple(rng.randint(-1, I64) for _ in range(rng.randint(0, 12)))


def _reconfig(rng):
    return Reconfig(rng.randint(0, U32), rng.randint(0, U64), rng.randint(-1, I64),
                    tuple(_vote(rng) for _ in range(rng.randint(0, 3))), _bytes(rng, 80))


def _entries(rng):
    return tuple(_bytes(rng, 40) for _ in range(rng.randint(0, 10)))


GENERATORS = {
    "DATA": lambda r: Envelope(_mid(r), DataMsg(_entries(r))),
    "AGREEMENT": lambda r: Envelope(_mid(r), _vote(r)),
    "ACTIVATE": lambda r: Activate(_sv(r)),
    "DEACTIVATE": lambda r: Deactivate(),
    "SV-GOSSIP": lambda r: SvGossip(_sv(r)),
    "PIECE-REQUEST": lambda r: PieceRequest(_mid(r)),
    "RECONFIG": _reconfig,
    "NEW-CONFIG": lambda r: NewConfig(r.randint(0, U64), tuple(_reconfig(r) for _ in range(r.randint(0, 3))),
                                      r.randint(0, U32), _bytes(r, 80)),
    "CHAIN-SUBMIT": lambda r: ChainSubmit(r.randint(0, U32), r.randint(0, U64), _bytes(r)),
    "CHAIN-FORWARD": lambda r: ChainForward(r.randint(0, U64), tuple(
        ChainItem(r.randint(0, U32), r.randint(0, U64), _bytes(r, 40)) for _ in range(r.randint(0, 5)))),
    "CHAIN-ACK": lambda r: ChainAck(r.randint(0, U64), tuple(r.randint(0, U64) for _ in range(r.randint(0, 8)))),
    "APPEND": lambda r: Append(r.randint(0, U64), _bytes(r, 300)),
    "APPEND-REPLY": lambda r: AppendReply(r.randint(0, U64), r.randint(0, 255), r.randint(-1, I64),
                                          r.randint(0, U32)),
    "READ": lambda r: Read(r.randint(0, U64), r.randint(-1, I64)),
    "READ-REPLY": lambda r: ReadReply(r.randint(0, U64), r.randint(0, 255), r.randint(-1, I64), _mid(r),
                                      _entries(r)),
}


def random_messages(count: int, seed: int = 0):
    """``count`` messages cycling through every frame type."""
    rng = random.Random(seed)
    kinds = sorted(GENERATORS)
    for i in range(count):
        yield kinds[i % len(kinds)], GENERATORS[kinds[i % len(kinds)]](rng)
