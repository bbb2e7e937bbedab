"""Observability-gated send and receive queues.

A queue stands between a cell's message process and its network
interface.  Each entry carries an ``observable`` flag saying whether the
queue currently promises that packet to the cell.  The link flips these
flags as the four-phase cycle advances, so that a packet is never
observable on both sides of the link at once.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .codec import Packet
from .errors import ConflictingDuplicate, NoSuchEntry, QueueFull

DEFAULT_CAPACITY = 16


class Side(enum.Enum):
    SENDER = "sender"
    RECEIVER = "receiver"


class EntryState(enum.Enum):
    PENDING_SEND = "pending_send"
    IN_FLIGHT = "in_flight"
    HELD_UNREVEALED = "held_unrevealed"
    REVEALED = "revealed"
    RETIRED = "retired"


class HoldResult(enum.Enum):
    HELD = "held"
    DUPLICATE = "duplicate"


@dataclass
class QueueEntry:
    packet: Packet
    observable: bool
    state: EntryState
    # set on re-offers after a restart: the receiver may already hold this packet
    resend: bool = False

    @property
    def key(self) -> tuple[int, int]:
        return self.packet.key


@dataclass
class ObservableQueue:
    side: Side
    capacity: int = DEFAULT_CAPACITY
    entries: list[QueueEntry] = field(default_factory=list)
    # receiver side: keys already handed to the cell, kept for dedupe
    consumed: dict[tuple[int, int], bytes] = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be non-negative")

    def __len__(self):
        return len(self.entries)

    def find(self, message_id: int, seq: int) -> QueueEntry | None:
        for e in self.entries:
            if e.key == (message_id, seq):
                return e
        return None

    @property
    def is_full(self) -> bool:
        return len(self.entries) >= self.capacity

    def observable_keys(self) -> list[tuple[int, int]]:
        return [e.key for e in self.entries if e.observable]

    def snapshot(self) -> tuple:
        """Hashable summary of the queue contents."""
        return (
            tuple((e.key, e.packet.payload, e.state.value, e.observable, e.resend) for e in self.entries),
            tuple(sorted(self.consumed)),
        )


def _require_side(q: ObservableQueue, side: Side):
    if q.side is not side:
        raise ValueError(f"operation needs a {side.value} queue, got {q.side.value}")


def push_send(q: ObservableQueue, p: Packet) -> None:
    """Append a packet for transmission; it becomes observable at the sender."""
    _require_side(q, Side.SENDER)
    if q.is_full:
        raise QueueFull(f"send queue at capacity {q.capacity}")
    q.entries.append(QueueEntry(p, observable=True, state=EntryState.PENDING_SEND))


def next_to_send(q: ObservableQueue) -> Packet | None:
    """Hand the oldest pending packet to the interface, or None.

    Returns None while another entry is in flight: the link carries one
    token, hence at most one packet per link is ever in transit.
    """
    _require_side(q, Side.SENDER)
    if any(e.state is EntryState.IN_FLIGHT for e in q.entries):
        return None
    for e in q.entries:
        if e.state is EntryState.PENDING_SEND:
            e.state = EntryState.IN_FLIGHT
            e.observable = False
            return e.packet
    return None


def _in_flight(q: ObservableQueue, message_id: int, seq: int) -> QueueEntry:
    e = q.find(message_id, seq)
    if e is None or e.state is not EntryState.IN_FLIGHT:
        raise NoSuchEntry(f"no in-flight entry ({message_id}, {seq})")
    return e


def unsend(q: ObservableQueue, message_id: int, seq: int) -> None:
    """Return an in-flight packet to the head of the pending list (retry limit hit)."""
    e = _in_flight(q, message_id, seq)
    e.state = EntryState.PENDING_SEND
    e.observable = not e.resend


def retire_sent(q: ObservableQueue, message_id: int, seq: int) -> None:
    """The receiver accepted the packet: stop promising it to the sender cell."""
    _require_side(q, Side.SENDER)
    e = _in_flight(q, message_id, seq)
    e.state = EntryState.RETIRED
    e.observable = False


def confirm_sent(q: ObservableQueue, message_id: int, seq: int) -> QueueEntry:
    """Drop a retired entry once the receiver reports the packet revealed."""
    _require_side(q, Side.SENDER)
    e = q.find(message_id, seq)
    if e is None or e.state is not EntryState.RETIRED:
        raise NoSuchEntry(f"no retired entry ({message_id}, {seq})")
    q.entries.remove(e)
    return e


def hold_unrevealed(q: ObservableQueue, p: Packet) -> HoldResult:
    """Store an accepted packet without exposing it to the receiving cell.

    Re-holding a packet that is already present (or was already consumed)
    is an idempotent no-op reported as DUPLICATE.
    """
    _require_side(q, Side.RECEIVER)
    known = q.find(*p.key)
    if known is not None:
        if known.packet.payload != p.payload:
            raise ConflictingDuplicate(f"packet {p.key} seen with two payloads")
        return HoldResult.DUPLICATE
    if p.key in q.consumed:
        if q.consumed[p.key] != p.payload:
            raise ConflictingDuplicate(f"packet {p.key} seen with two payloads")
        return HoldResult.DUPLICATE
    if q.is_full:
        raise QueueFull(f"receive queue at capacity {q.capacity}")
    q.entries.append(QueueEntry(p, observable=False, state=EntryState.HELD_UNREVEALED))
    return HoldResult.HELD


def reveal(q: ObservableQueue, message_id: int, seq: int) -> bool:
    """Expose a held packet to the receiving cell.

    Returns True on the first reveal and False when the packet was already
    revealed or consumed.
    """
    _require_side(q, Side.RECEIVER)
    e = q.find(message_id, seq)
    if e is None:
        if (message_id, seq) in q.consumed:
            return False
        raise NoSuchEntry(f"nothing held for ({message_id}, {seq})")
    if e.state is EntryState.REVEALED:
        return False
    if e.state is not EntryState.HELD_UNREVEALED:
        raise NoSuchEntry(f"entry ({message_id}, {seq}) is {e.state.value}")
    e.state = EntryState.REVEALED
    e.observable = True
    return True


def consume(q: ObservableQueue) -> Packet | None:
    """The receiving cell takes the oldest revealed packet out of the queue."""
    _require_side(q, Side.RECEIVER)
    for e in q.entries:
        if e.state is EntryState.REVEALED:
            q.entries.remove(e)
            q.consumed[e.key] = e.packet.payload
            return e.packet
    return None


def restart_reset(q: ObservableQueue) -> None:
    """Bring a sender queue back to a re-offerable state after link restart.

    IN_FLIGHT entries go back to PENDING_SEND.  RETIRED entries were
    accepted but never confirmed, so the receiver may or may not have
    revealed them; they are re-offered hidden from the sender cell and the
    receiver's dedupe absorbs the repeat.
    """
    if q.side is not Side.SENDER:
        return
    for e in q.entries:
        if e.state is EntryState.IN_FLIGHT:
            e.state = EntryState.PENDING_SEND
            e.observable = not e.resend
        elif e.state is EntryState.RETIRED:
            e.state = EntryState.PENDING_SEND
            e.resend = True
            e.observable = False
