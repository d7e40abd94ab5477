import random

import pytest
from hypothesis import given, settings, strategies as st

from ringbft.messages import Append, DataMsg, Envelope
from ringbft.core import MessageId
from ringbft.runtime import wire
from ringbft.runtime.wire import (
    FRAME_TYPES, MAX_FRAME, FrameDecoder, FrameError, decode_frame, encode_frame, frame_size, header_size,
    iter_frames,
)

from frames import GENERATORS, random_messages


def test_every_frame_type_has_a_generator():
    assert set(GENERATORS) == set(FRAME_TYPES.values())


@pytest.mark.parametrize("kind", sorted(GENERATORS))
def test_round_trip_and_size(kind):
    rng = random.Random(kind)
    for _ in range(200):
        msg = GENERATORS[kind](rng)
        buf = encode_frame(msg)
        assert FRAME_TYPES[buf[4]] == kind
        assert decode_frame(buf) == msg
        assert frame_size(msg) == len(buf)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.integers(1, 9), min_size=1, max_size=30))
def test_stream_decoder_handles_any_split(seed, cuts):
    msgs = [m for _, m in random_messages(15, seed)]
    blob = b"".join(encode_frame(m) for m in msgs)
    dec = FrameDecoder()
    out, pos, i = [], 0, 0
    while pos < len(blob):
        step = cuts[i % len(cuts)] * 37
        out.extend(dec.feed(blob[pos:pos + step]))
        pos += step
        i += 1
    assert out == msgs
    assert list(iter_frames(blob)) == msgs


def test_trailing_partial_frame_in_log():
    blob = encode_frame(Append(1, b"x"))
    with pytest.raises(FrameError):
        list(iter_frames(blob + blob[:3]))


def test_known_sizes():
    data = Envelope(MessageId(0, 0), DataMsg(tuple(bytes(250) for _ in range(10))))
    assert frame_size(data) == 2559
    assert header_size(data) == 17
    assert header_size(Append(0, b"")) == frame_size(Append(0, b""))


def test_malformed_frames_rejected():
    good = encode_frame(Append(3, b"abc"))
    with pytest.raises(FrameError):
        decode_frame(good[:-1])  # length prefix no longer matches
    with pytest.raises(FrameError):
        decode_frame(b"\x00\x00")
    with pytest.raises(FrameError):
        decode_frame(b"\x00\x00\x00\x01\x7f")  # unknown type
    with pytest.raises(FrameError):
        decode_frame(good + b"\x00")
    bad = bytearray(good)
    bad[-4] = 0xff  # payload length beyond the body
    with pytest.raises(FrameError):
        decode_frame(bytes(bad))
    with pytest.raises(FrameError):
        FrameDecoder().feed((MAX_FRAME + 1).to_bytes(4, "big") + b"\x01")
    with pytest.raises(FrameError):
        FrameDecoder().feed(b"\x00\x00\x00\x00")


def test_oversized_frame_refused_on_encode():
    with pytest.raises(FrameError):
        encode_frame(Append(0, bytes(MAX_FRAME)))


def test_random_garbage_never_crashes_decoder():
    rng = random.Random(7)
    for _ in range(3000):
        tag = rng.choice(sorted(FRAME_TYPES) + [0x99])
        body = rng.randbytes(rng.randint(0, 60))
        try:
            wire.decode_body(tag, body)
        except FrameError:
            pass
