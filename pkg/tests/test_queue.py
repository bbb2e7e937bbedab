import pytest

from entlink import codec
from entlink import queue as q
from entlink.errors import ConflictingDuplicate, NoSuchEntry, QueueFull
from entlink.queue import EntryState, HoldResult, Side


def pkt(seq, payload=b"x", mid=1):
    return codec.signal(codec.Direction.L2R, codec.Intent.OFFER, mid, seq, payload)


def test_sender_lifecycle():
    s = q.ObservableQueue(Side.SENDER, 2)
    q.push_send(s, pkt(0))
    q.push_send(s, pkt(1))
    assert s.observable_keys() == [(1, 0), (1, 1)]
    with pytest.raises(QueueFull):
        q.push_send(s, pkt(2))

    assert q.next_to_send(s) == pkt(0)
    assert s.observable_keys() == [(1, 1)]
    assert q.next_to_send(s) is None  # one packet in transit per link

    q.retire_sent(s, 1, 0)
    assert s.find(1, 0).state is EntryState.RETIRED
    q.confirm_sent(s, 1, 0)
    assert s.find(1, 0) is None
    assert q.next_to_send(s) == pkt(1)


def test_unsend_restores_observability():
    s = q.ObservableQueue(Side.SENDER)
    q.push_send(s, pkt(0))
    q.next_to_send(s)
    q.unsend(s, 1, 0)
    e = s.find(1, 0)
    assert e.state is EntryState.PENDING_SEND and e.observable


def test_sender_errors():
    s = q.ObservableQueue(Side.SENDER)
    with pytest.raises(NoSuchEntry):
        q.retire_sent(s, 1, 0)
    with pytest.raises(NoSuchEntry):
        q.confirm_sent(s, 1, 0)
    with pytest.raises(ValueError):
        q.hold_unrevealed(s, pkt(0))


def test_receiver_hold_reveal_consume():
    r = q.ObservableQueue(Side.RECEIVER, 1)
    assert q.hold_unrevealed(r, pkt(0)) is HoldResult.HELD
    assert r.observable_keys() == []
    assert q.hold_unrevealed(r, pkt(0)) is HoldResult.DUPLICATE
    assert q.reveal(r, 1, 0) is True
    assert r.observable_keys() == [(1, 0)]
    assert q.reveal(r, 1, 0) is False
    assert q.consume(r) == pkt(0)
    assert q.consume(r) is None
    # idempotent after consumption too
    assert q.hold_unrevealed(r, pkt(0)) is HoldResult.DUPLICATE
    assert q.reveal(r, 1, 0) is False


def test_receiver_conflicts_and_capacity():
    r = q.ObservableQueue(Side.RECEIVER, 1)
    q.hold_unrevealed(r, pkt(0, b"a"))
    with pytest.raises(ConflictingDuplicate):
        q.hold_unrevealed(r, pkt(0, b"b"))
    with pytest.raises(QueueFull):
        q.hold_unrevealed(r, pkt(1))
    with pytest.raises(NoSuchEntry):
        q.reveal(r, 9, 9)
    q.reveal(r, 1, 0)
    q.consume(r)
    with pytest.raises(ConflictingDuplicate):
        q.hold_unrevealed(r, pkt(0, b"b"))


def test_restart_reset_reoffers_retired_hidden():
    s = q.ObservableQueue(Side.SENDER)
    q.push_send(s, pkt(0))
    q.push_send(s, pkt(1))
    q.next_to_send(s)
    q.retire_sent(s, 1, 0)
    q.restart_reset(s)
    first = s.find(1, 0)
    assert first.state is EntryState.PENDING_SEND and first.resend and not first.observable
    assert s.observable_keys() == [(1, 1)]

    # in flight again, then restarted again: still hidden
    assert q.next_to_send(s) == pkt(0)
    q.restart_reset(s)
    assert not s.find(1, 0).observable


def test_restart_reset_in_flight_becomes_pending_and_visible():
    s = q.ObservableQueue(Side.SENDER)
    q.push_send(s, pkt(0))
    q.next_to_send(s)
    q.restart_reset(s)
    e = s.find(1, 0)
    assert e.state is EntryState.PENDING_SEND and e.observable


def test_snapshot_is_hashable():
    s = q.ObservableQueue(Side.SENDER)
    q.push_send(s, pkt(0))
    hash(s.snapshot())
