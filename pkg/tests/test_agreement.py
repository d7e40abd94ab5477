import dataclasses

import pytest

from ringbft.agreement import BATCH_TIMER, ReplicaParams, SafetyError, StableLog, StableRecord
from ringbft.core import MessageId, batch_digest
from ringbft.messages import OK, NOT_FOUND, AgreementMsg, Append, AppendReply, DataMsg, Read, ReadReply

from netutil import Bus

CLIENT = "client"


def test_append_commits_everywhere():
    bus = Bus()
    bus.nodes[2].on_message(CLIENT, Append(7, b"hello"))
    bus.nodes[2].flush_batch()
    bus.run()
    for node in bus.nodes.values():
        rec = node.stable.get(0)
        assert rec.entries == (b"hello",) and rec.id == MessageId(2, 0)
        assert len(rec.certificate) >= bus.cfg.quorum
    assert bus.outbox == [(2, CLIENT, AppendReply(7, OK, 0, 0))]


def test_processed_broadcasts_per_append():
    bus = Bus(n=11)
    for r in range(11):
        bus.nodes[r].ring.counters.clear()
    bus.nodes[5].append(CLIENT, 0, b"x")
    bus.nodes[5].flush_batch()
    bus.run()
    # one data broadcast, one proposal and one confirmation from every other replica
    for node in bus.nodes.values():
        assert node.ring.delivered == 11 + 1
        assert node.stable.watermark == 0


def test_batching_caps_at_ten():
    bus = Bus()
    node = bus.nodes[1]
    for i in range(25):
        node.append(CLIENT, i, b"%d" % i)
    # two full batches go out at once; the remainder leaves when one of them commits
    assert len(node._batch) == 5 and len(node._waiters) == 2
    bus.run()
    assert [len(r.entries) for _, r in bus.nodes[0].stable.items()] == [10, 10, 5]
    offsets = sorted((m.sn, m.offset) for _, _, m in bus.outbox)
    assert offsets[:3] == [(0, 0), (0, 1), (0, 2)] and offsets[-1] == (2, 4)


def test_partial_batch_held_while_own_batches_in_flight():
    params = ReplicaParams(batch_delay=0.001, batch_hold=1.0, inflight_cap=1)
    bus = Bus(params=params, drop=lambda s, d, m: True)
    node = bus.nodes[1]
    node.append(CLIENT, 0, b"a")
    bus.fire(1, BATCH_TIMER)
    assert len(node._waiters) == 1
    node.append(CLIENT, 1, b"b")
    bus.fire(1, BATCH_TIMER)
    assert node._batch and BATCH_TIMER in bus.hosts[1].timers
    bus.t = 2.0
    bus.fire(1, BATCH_TIMER)
    assert not node._batch and len(node._waiters) == 2


def test_read_api():
    bus = Bus()
    bus.nodes[0].append(CLIENT, 0, b"e")
    bus.nodes[0].flush_batch()
    bus.run()
    bus.outbox.clear()
    node = bus.nodes[4]
    node.on_message(CLIENT, Read(1, 0))
    node.on_message(CLIENT, Read(2, 5))
    node.on_message(CLIENT, Read(3, -1))
    bus.run()
    replies = [m for _, _, m in bus.outbox]
    assert replies[0] == ReadReply(1, OK, 0, MessageId(0, 0), (b"e",))
    assert replies[1].status == NOT_FOUND
    assert replies[2].status == OK and replies[2].sn == 1
    assert node.read_log(0) == ((b"e",), MessageId(0, 0))
    assert node.read_log(3) is None


def _ready(bus, r=1):
    """Replica ``r`` holds data (2,0) but nothing else."""
    node = bus.nodes[r]
    node.handle_data(MessageId(2, 0), (b"d",))
    node.handle_data(MessageId(2, 1), (b"e",))
    return node


def _vote(bus, signer, sn, mid, pn=0, mark=-1, hash_=None):
    node = bus.nodes[signer]
    h = hash_ or batch_digest(pn, sn, mid, node.data.get(mid, (b"d",)) if mid == MessageId(2, 0) else (b"e",))
    msg = AgreementMsg(pn, sn, mid, h, mark, signer)
    return dataclasses.replace(msg, sig=bus.scheme.sign(signer, msg.signing_bytes()))


def test_validation_rules():
    bus = Bus(drop=lambda s, d, m: True)
    node = _ready(bus)
    seq = bus.cfg.sequencer(0)
    a, b = MessageId(2, 0), MessageId(2, 1)
    prop = _vote(bus, seq, 0, a)
    assert node.validate(prop)
    # wrong digest, wrong configuration, forged signature
    assert not node.validate(dataclasses.replace(prop, hash=bytes(32)))
    assert not node.validate(_vote(bus, seq, 0, a, pn=1))
    assert not node.validate(dataclasses.replace(prop, signer=3))
    node._on_agreement(prop)
    # a second proposal for the same sn, or the same id at another sn
    assert not node.validate(_vote(bus, seq, 0, b))
    assert not node.validate(_vote(bus, seq, 1, a))
    # confirmations must match the proposal, once per signer
    assert node.validate(_vote(bus, 3, 0, a))
    assert not node.validate(_vote(bus, 3, 0, b))
    node._on_agreement(_vote(bus, 3, 0, a))
    assert not node.validate(_vote(bus, 3, 0, a))


def test_confirmation_before_proposal_is_deferred():
    bus = Bus(drop=lambda s, d, m: True)
    node = _ready(bus)
    a = MessageId(2, 0)
    node._on_agreement(_vote(bus, 3, 0, a))
    assert 3 not in node.votes.get((0, 0), {})
    node._on_agreement(_vote(bus, 0, 0, a))
    assert 3 in node.votes[(0, 0)]


def test_agreement_waits_for_data():
    bus = Bus(drop=lambda s, d, m: True)
    node = bus.nodes[1]
    a = MessageId(2, 0)
    h = batch_digest(0, 0, a, (b"d",))
    prop = AgreementMsg(0, 0, a, h, -1, 0)
    prop = dataclasses.replace(prop, sig=bus.scheme.sign(0, prop.signing_bytes()))
    node._on_agreement(prop)
    assert (0, 0) not in node.proposals
    node.handle_data(a, (b"d",))
    assert (0, 0) in node.proposals


def test_signer_must_match_origin():
    bus = Bus(drop=lambda s, d, m: True)
    node = _ready(bus)
    prop = _vote(bus, 0, 0, MessageId(2, 0))
    node.handle_agreement(prop, origin=4)
    assert node.evidence[4] == 1 and not node.proposals


def test_stable_log_refuses_conflicts():
    log = StableLog()
    log.add(StableRecord(1, MessageId(0, 0), (), 0, ()))
    assert log.watermark == -1
    log.add(StableRecord(0, MessageId(0, 1), (), 0, ()))
    assert log.watermark == 1
    log.add(StableRecord(0, MessageId(0, 1), (), 0, ()))
    with pytest.raises(SafetyError):
        log.add(StableRecord(0, MessageId(3, 3), (), 0, ()))
    with pytest.raises(SafetyError):
        log.add(StableRecord(5, MessageId(0, 0), (), 0, ()))


def test_for_delay_scales_timers():
    p = ReplicaParams.for_delay(0.01, 6)
    assert p.progress_timeout == pytest.approx(10 * 14 * 0.01)
    assert p.batch_hold == pytest.approx(14 * 0.01)
    assert p.ring.omission_timeout == pytest.approx(0.04)
    assert p.ring.max_timeout == pytest.approx(5 * 7 * 0.01)
