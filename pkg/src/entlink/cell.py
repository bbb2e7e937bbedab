"""Cell agents and the message layer they run on top of the link.

A message travels as a zero-data M-OFFER control packet announcing the
fragment count, then its data fragments, then three more control packets
(M-ACCEPT back, M-CONFIRM forward, M-DONE back).  This repeats the
four-phase packet cycle one level up: the receiving cell keeps the
reassembled message out of its inbox until the M-DONE it sent has been
confirmed, and the sending cell counts the message delivered only when it
sees M-DONE.

Control packets set the top bit of ``message_id`` and carry a small
payload (kind byte + fragment count), because an OFFER with an empty
payload is a NACK on the wire.
"""

from __future__ import annotations

import enum
import struct
from collections import deque
from dataclasses import dataclass, field

from . import codec
from . import link
from . import queue as q
from .codec import Direction, Intent, Message, Packet
from .errors import ConflictingFragment, InsufficientData, QueueFull

CONTROL_BIT = 1 << 31
DEFAULT_WATCHDOG_TIMEOUT = 64
DEFAULT_POLL_INTERVAL = 8

_CONTROL = struct.Struct(">BI")


class Control(enum.IntEnum):
    M_OFFER = 0
    M_ACCEPT = 1
    M_CONFIRM = 2
    M_DONE = 3


class MPhase(enum.Enum):
    M_IDLE = "m_idle"
    M_OFFERED = "m_offered"
    M_HELD = "m_held"
    M_CONFIRMED = "m_confirmed"


class Health(enum.Enum):
    HEALTHY = "healthy"
    STALLED = "stalled"


def _queued(message_id: int, seq: int, payload: bytes, last: bool = False) -> Packet:
    # queued packets are re-addressed when offered, so the direction here is arbitrary
    return codec.signal(Direction.L2R, Intent.OFFER, message_id, seq, payload, last)


def control_packet(kind: Control, message_id: int, count: int = 0) -> Packet:
    return _queued(message_id | CONTROL_BIT, int(kind), _CONTROL.pack(kind, count))


def is_control(p: Packet) -> bool:
    return bool(p.message_id & CONTROL_BIT)


def parse_control(p: Packet) -> tuple[Control, int, int]:
    """Return (kind, message_id, fragment count) of a control packet."""
    kind, count = _CONTROL.unpack(p.payload)
    return Control(kind), p.message_id & ~CONTROL_BIT, count


def packetize(msg: Message, fragment_size: int) -> list[Packet]:
    if fragment_size < 1:
        raise ValueError("fragment_size must be at least 1")
    if msg.message_id & CONTROL_BIT:
        raise ValueError("message ids must stay below 2**31")
    chunks = [msg.payload[i:i + fragment_size] for i in range(0, len(msg.payload), fragment_size)]
    return [_queued(msg.message_id, seq, chunk, last=(seq == len(chunks) - 1))
            for seq, chunk in enumerate(chunks)]


def reassemble(fragments) -> Message | None:
    """Join fragments in seq order, or return None while some are missing.

    Identical duplicates are harmless; the same seq with two payloads raises
    ConflictingFragment.
    """
    fragments = list(fragments)
    ids = {p.message_id for p in fragments}
    if len(ids) > 1:
        raise ValueError(f"fragments from several messages: {sorted(ids)}")
    by_seq: dict[int, Packet] = {}
    for p in fragments:
        seen = by_seq.get(p.seq)
        if seen is not None and (seen.payload != p.payload or seen.last != p.last):
            raise ConflictingFragment(f"fragment {p.key} seen with two payloads")
        by_seq[p.seq] = p
    if not by_seq:
        return None
    lasts = [s for s, p in by_seq.items() if p.last]
    if not lasts:
        return None
    n = lasts[0] + 1
    if len(lasts) > 1 or max(by_seq) >= n:
        raise ConflictingFragment(f"message {ids.pop()} has fragments beyond its terminal one")
    if len(by_seq) < n:
        return None
    return Message(ids.pop(), b"".join(by_seq[s].payload for s in range(n)))


@dataclass
class WatchdogClock:
    timeout: int = DEFAULT_WATCHDOG_TIMEOUT
    poll_interval: int = DEFAULT_POLL_INTERVAL
    last_activity: int = 0
    enabled: bool = True

    def touch(self, now: int):
        self.last_activity = now


@dataclass
class MessageLayerState:
    outgoing: dict[int, MPhase] = field(default_factory=dict)
    incoming: dict[int, MPhase] = field(default_factory=dict)


@dataclass
class Timeline:
    """Observer-clock times this cell saw, for timescale reports."""

    messages: list[int] = field(default_factory=list)
    cycles: list[int] = field(default_factory=list)  # durations, first offer to delivery
    frames: list[int] = field(default_factory=list)
    offers: dict[tuple[int, int], int] = field(default_factory=dict)


@dataclass
class CellAgent:
    id: str
    endpoint: link.LinkEndpoint
    q_send: q.ObservableQueue
    q_recv: q.ObservableQueue
    fragment_size: int = 64
    outbox: list[Message] = field(default_factory=list)
    inbox: list[Message] = field(default_factory=list)
    reassembly: dict[int, dict[int, Packet]] = field(default_factory=dict)
    expected: dict[int, int] = field(default_factory=dict)
    held: dict[int, Message] = field(default_factory=dict)
    delivered: list[int] = field(default_factory=list)
    watchdog: WatchdogClock = field(default_factory=WatchdogClock)
    msg_layer: MessageLayerState = field(default_factory=MessageLayerState)
    backlog: deque = field(default_factory=deque)
    replies: deque = field(default_factory=deque)  # message-layer answers overtake the backlog
    timeline: Timeline = field(default_factory=Timeline)
    violations: list[str] = field(default_factory=list)
    backpressure: int = 0
    next_id: int = 1

    @property
    def endpoints(self) -> list[link.LinkEndpoint]:
        return [self.endpoint]

    def enqueue(self, p: Packet, reply: bool = False):
        """Queue a packet behind any backlog; the link never drops, so a full queue waits here.

        Replies wait only behind earlier replies, so a busy peer cannot
        starve the other side's message handshakes.
        """
        (self.replies if reply else self.backlog).append(p)
        self.flush_backlog()

    def flush_backlog(self):
        for pending in (self.replies, self.backlog):
            while pending:
                try:
                    q.push_send(self.q_send, pending[0])
                except QueueFull:
                    return
                pending.popleft()


def make_cell(cell_id: str, capacity: int = q.DEFAULT_CAPACITY, fragment_size: int = 64,
              retry_limit: int = link.DEFAULT_RETRY_LIMIT, seed=None) -> CellAgent:
    ep = link.LinkEndpoint(cell_id, retry_limit=retry_limit)
    if seed is not None:
        ep.rng.seed(seed)
    return CellAgent(cell_id, ep, q.ObservableQueue(q.Side.SENDER, capacity),
                     q.ObservableQueue(q.Side.RECEIVER, capacity), fragment_size=fragment_size)


def submit(cell: CellAgent, payload: bytes, now: int = 0) -> Message:
    """Hand a new message to the cell for delivery to its peer."""
    msg = Message(cell.next_id, bytes(payload))
    cell.next_id += 1
    fragments = packetize(msg, cell.fragment_size)
    cell.outbox.append(msg)
    cell.msg_layer.outgoing[msg.message_id] = MPhase.M_OFFERED
    cell.timeline.messages.append(now)
    cell.enqueue(control_packet(Control.M_OFFER, msg.message_id, len(fragments)))
    for p in fragments:
        cell.enqueue(p)
    return msg


def message_layer_step(cell: CellAgent, event) -> Packet | None:
    """Advance the message-layer handshake for one link-level event.

    ``event`` is ``("revealed", packet)`` for a packet the cell just took
    from its receive queue, or ``("delivered", key)`` when one of its own
    packets completed a cycle.  Returns the control packet queued in
    response, if any.  Out-of-order control traffic is recorded as a
    violation and the message is abandoned.
    """
    kind, arg = event
    ml = cell.msg_layer
    if kind == "delivered":
        message_id, seq = arg
        if message_id & CONTROL_BIT and seq == Control.M_DONE:
            m = message_id & ~CONTROL_BIT
            msg = cell.held.pop(m, None)
            if msg is None or ml.incoming.get(m) is not MPhase.M_CONFIRMED:
                cell.violations.append(f"M-DONE confirmed for message {m} not awaiting it")
                return None
            cell.inbox.append(msg)
            del ml.incoming[m]
        return None

    if kind != "revealed":
        raise ValueError(f"unknown message-layer event {kind!r}")
    p = arg
    if not is_control(p):
        frags = cell.reassembly.setdefault(p.message_id, {})
        frags[p.seq] = p
        return _maybe_complete(cell, p.message_id)

    ctl, m, count = parse_control(p)
    reply = None
    if ctl is Control.M_OFFER:
        if m in ml.incoming:
            cell.violations.append(f"second M-OFFER for message {m}")
            return None
        ml.incoming[m] = MPhase.M_OFFERED
        cell.expected[m] = count
        return _maybe_complete(cell, m)
    if ctl is Control.M_ACCEPT:
        if ml.outgoing.get(m) is not MPhase.M_OFFERED:
            cell.violations.append(f"M-ACCEPT for message {m} in {ml.outgoing.get(m)}")
            return None
        ml.outgoing[m] = MPhase.M_CONFIRMED
        reply = control_packet(Control.M_CONFIRM, m)
    elif ctl is Control.M_CONFIRM:
        if ml.incoming.get(m) is not MPhase.M_HELD:
            cell.violations.append(f"M-CONFIRM for message {m} in {ml.incoming.get(m)}")
            return None
        ml.incoming[m] = MPhase.M_CONFIRMED
        reply = control_packet(Control.M_DONE, m)
    elif ctl is Control.M_DONE:
        if ml.outgoing.get(m) is not MPhase.M_CONFIRMED:
            cell.violations.append(f"M-DONE for message {m} in {ml.outgoing.get(m)}")
            return None
        del ml.outgoing[m]
        cell.delivered.append(m)
    if reply is not None:
        cell.enqueue(reply, reply=True)
    return reply


def _maybe_complete(cell: CellAgent, m: int) -> Packet | None:
    if cell.msg_layer.incoming.get(m) is not MPhase.M_OFFERED:
        return None
    n = cell.expected[m]
    frags = cell.reassembly.get(m, {})
    if n == 0:
        msg = Message(m, b"")
    else:
        try:
            msg = reassemble(frags.values())
        except ConflictingFragment as exc:
            cell.violations.append(str(exc))
            return None
        if msg is None or len(frags) != n:
            return None
    cell.held[m] = msg
    cell.reassembly.pop(m, None)
    cell.msg_layer.incoming[m] = MPhase.M_HELD
    reply = control_packet(Control.M_ACCEPT, m)
    cell.enqueue(reply, reply=True)
    return reply


def service(cell: CellAgent, now: int = 0) -> list[tuple[str, object]]:
    """Let the cell react after a link event.

    Consumes revealed packets, feeds link notices to the message layer and
    refills the send queue.  Returns what happened, for the event log.
    """
    happened = []
    ep = cell.endpoint
    notices, ep.notices = ep.notices, []
    for kind, key in notices:
        if kind == "backpressure":
            cell.backpressure += 1
            happened.append(("BACKPRESSURE", key))
        elif kind == "delivered":
            cell.timeline.cycles.append(now - cell.timeline.offers.pop(key, now))
            happened.append(("DELIVERED", key))
            before = len(cell.inbox)
            message_layer_step(cell, ("delivered", key))
            if len(cell.inbox) > before:
                cell.timeline.messages.append(now)
                happened.append(("INBOX", cell.inbox[-1].message_id))
    while True:
        p = q.consume(cell.q_recv)
        if p is None:
            break
        happened.append(("REVEAL", p.key))
        before = len(cell.delivered)
        message_layer_step(cell, ("revealed", p))
        if len(cell.delivered) > before:
            happened.append(("MDONE", cell.delivered[-1]))
    cell.flush_backlog()
    return happened


def note_frame(cell: CellAgent, now: int, sent: Packet | None = None):
    cell.watchdog.touch(now)
    cell.timeline.frames.append(now)
    if sent is not None and sent.is_data_offer:
        cell.timeline.offers.setdefault(sent.key, now)


def watchdog_poll(cell: CellAgent, now: int) -> Health:
    """Sample the link from the cell's own clock domain."""
    wd = cell.watchdog
    if not wd.enabled:
        return Health.HEALTHY
    if now - wd.last_activity > wd.timeout:
        return Health.STALLED
    return Health.HEALTHY


def timescale_ratios(message_times, cycle_durations, frame_times) -> tuple[float, float]:
    """Return (dt_M / dt_P, dt_P / dt_tick).

    dt_M and dt_tick are mean intervals over the observed window (window
    length / count); dt_P is the mean time a packet cycle takes from its
    first offer to its confirmed delivery, retries included.
    """
    if not message_times or not cycle_durations or not frame_times:
        raise InsufficientData("every stream needs at least one sample")
    times = list(message_times) + list(frame_times)
    window = max(times) - min(times) or 1
    dt_m = window / len(message_times)
    dt_p = sum(cycle_durations) / len(cycle_durations) or 1e-9
    dt_tick = window / len(frame_times)
    return dt_m / dt_p, dt_p / dt_tick


@dataclass(frozen=True)
class TimescaleReport:
    message_over_packet: float
    packet_over_tick: float

    @property
    def violated(self) -> bool:
        return self.message_over_packet <= 1 or self.packet_over_tick <= 1


def timescale_report(cell: CellAgent) -> TimescaleReport:
    if not cell.delivered and not cell.inbox:
        raise InsufficientData(f"cell {cell.id} has not delivered or received any message")
    t = cell.timeline
    return TimescaleReport(*timescale_ratios(t.messages, t.cycles, t.frames))
