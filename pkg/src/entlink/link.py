"""Per-endpoint protocol state machine.

The link is a half-duplex "hot potato": exactly one signal is on the wire
at any time and every inbound signal produces exactly one outbound signal.
With nothing to send the two ends bounce idle signals back and forth
(L-TICK / R-TICK, the latter also called TOCK).  A transfer is grafted
onto an idle slot and runs four signals::

    S: OFFER(P)   -> P copied into S's send register
    R: ACCEPT     -> P held in R's queue, not yet observable
    S: IDLE       -> P no longer observable at S
    R: IDLE       -> P observable at R; cycle complete

A receiver that cannot take the payload answers with NACK (an OFFER
header with no payload) and the sender re-offers on its next turn.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from . import codec
from . import queue as q
from .codec import Direction, Intent, Packet
from .errors import CodecError, EntanglementLoss, NoSuchEntry, ProtocolViolation, QueueFull

DEFAULT_RETRY_LIMIT = 8
NONCE_BITS = 64


class Role(enum.Enum):
    LEFT = "L"
    RIGHT = "R"
    UNASSIGNED = "?"

    @property
    def direction(self) -> Direction:
        if self is Role.LEFT:
            return Direction.L2R
        if self is Role.RIGHT:
            return Direction.R2L
        raise ValueError("an unassigned endpoint has no direction")


class Phase(enum.Enum):
    BOOTSTRAPPING = "bootstrapping"
    IDLE_TOKEN_HELD = "idle_token_held"
    IDLE_AWAITING = "idle_awaiting"
    OFFER_SENT = "offer_sent"
    OFFER_HELD = "offer_held"
    CONFIRM_SENT = "confirm_sent"
    DEAD = "dead"


IDLE_PHASES = (Phase.IDLE_TOKEN_HELD, Phase.IDLE_AWAITING)


class Redraw(enum.Enum):
    """Bootstrap nonces tied; both ends draw again."""

    REDRAW = "redraw"


REDRAW = Redraw.REDRAW


@dataclass
class ClockSet:
    subtime: int = 0
    interior: int = 0
    exterior: int = 0

    def as_dict(self) -> dict:
        return {"subtime": self.subtime, "interior": self.interior, "exterior": self.exterior}


@dataclass
class LinkEndpoint:
    name: str
    role: Role = Role.UNASSIGNED
    phase: Phase = Phase.BOOTSTRAPPING
    send_register: Packet | None = None
    recv_register: Packet | None = None
    retry_count: int = 0
    clocks: ClockSet = field(default_factory=ClockSet)
    last_sent: Packet | None = None
    retry_limit: int = DEFAULT_RETRY_LIMIT
    rng: random.Random = field(default_factory=random.Random, repr=False)
    # (kind, key) notices for the owning cell: "revealed", "delivered", "backpressure"
    notices: list = field(default_factory=list)
    death_reason: str | None = None
    # key of the packet retired at ACCEPT, confirmed when the reveal ack arrives
    confirm_key: tuple[int, int] | None = None

    @property
    def direction(self) -> Direction:
        return self.role.direction

    @property
    def alive(self) -> bool:
        return self.phase not in (Phase.DEAD, Phase.BOOTSTRAPPING)

    def snapshot(self) -> tuple:
        """Hashable protocol state (interior and subtime clocks excluded)."""
        return (
            self.role.value,
            self.phase.value,
            self.send_register,
            self.recv_register,
            self.retry_count,
            self.last_sent,
            self.confirm_key,
            self.clocks.exterior,
        )


def tick_clocks(ep: LinkEndpoint, event_kind: str) -> ClockSet:
    """Advance the endpoint's clocks for one event.

    ``action`` is a local promise kept (subtime), ``frame`` a signal sent
    or received (interior), ``cycle`` a completed payload cycle (exterior).
    """
    if event_kind == "action":
        ep.clocks.subtime += 1
    elif event_kind == "frame":
        ep.clocks.subtime += 1
        ep.clocks.interior += 1
    elif event_kind == "cycle":
        ep.clocks.exterior += 1
    else:
        raise ValueError(f"unknown clock event {event_kind!r}")
    return ep.clocks


def draw_nonce(ep: LinkEndpoint) -> int:
    return ep.rng.getrandbits(NONCE_BITS)


def bootstrap_step(ep: LinkEndpoint, nonce_local: int, nonce_remote: int) -> Role | Redraw:
    """Break the L/R symmetry with a pair of coin flips.

    The higher nonce becomes LEFT and takes the token; a tie means redraw.
    """
    if ep.phase is not Phase.BOOTSTRAPPING:
        raise ProtocolViolation(f"{ep.name}: bootstrap outside BOOTSTRAPPING ({ep.phase.value})")
    if nonce_local == nonce_remote:
        return REDRAW
    ep.role = Role.LEFT if nonce_local > nonce_remote else Role.RIGHT
    ep.phase = Phase.IDLE_TOKEN_HELD if ep.role is Role.LEFT else Phase.IDLE_AWAITING
    tick_clocks(ep, "action")
    return ep.role


def _emit(ep: LinkEndpoint, p: Packet) -> Packet:
    ep.last_sent = p
    tick_clocks(ep, "frame")
    return p


def _take_turn(ep: LinkEndpoint, q_send: q.ObservableQueue) -> Packet:
    """Our slot: graft an offer if something is pending, else idle."""
    p = q.next_to_send(q_send)
    if p is None:
        ep.phase = Phase.IDLE_AWAITING
        return _emit(ep, codec.idle(ep.direction))
    tick_clocks(ep, "action")
    ep.send_register = p
    ep.retry_count = 0
    ep.phase = Phase.OFFER_SENT
    return _emit(ep, codec.offer(ep.direction, p))


def start(ep: LinkEndpoint, q_send: q.ObservableQueue) -> Packet:
    """Emit the first signal after bootstrap (LEFT only)."""
    if ep.phase is not Phase.IDLE_TOKEN_HELD:
        raise ProtocolViolation(f"{ep.name}: only the token holder can start ({ep.phase.value})")
    return _take_turn(ep, q_send)


def kill(ep: LinkEndpoint, reason: str) -> None:
    ep.phase = Phase.DEAD
    ep.death_reason = reason


def _violation(ep: LinkEndpoint, reason: str):
    kill(ep, reason)
    raise ProtocolViolation(f"{ep.name}: {reason}")


def on_receive(ep: LinkEndpoint, frame: Packet, q_send: q.ObservableQueue,
               q_recv: q.ObservableQueue, admit=None) -> Packet:
    """Process one inbound signal and return the single outbound reply.

    ``admit`` is an optional predicate consulted before holding an offered
    payload; returning False forces a NACK (receiver pressure).
    Raises ProtocolViolation, leaving the endpoint DEAD, on any illegal
    frame.
    """
    if not ep.alive:
        raise ProtocolViolation(f"{ep.name}: frame received while {ep.phase.value}")
    if frame.direction is ep.direction:
        _violation(ep, f"reflected {frame.label} addressed to ourselves")
    if ep.last_sent is not None and not codec.is_valid_reflection(ep.last_sent, frame):
        _violation(ep, f"{frame.label} is not a legal answer to {ep.last_sent.label}")
    tick_clocks(ep, "frame")

    try:
        return _transition(ep, frame, q_send, q_recv, admit)
    except EntanglementLoss as exc:
        kill(ep, str(exc))
        raise
    except NoSuchEntry as exc:
        kill(ep, str(exc))
        raise ProtocolViolation(f"{ep.name}: {exc}") from exc


def _transition(ep, frame, q_send, q_recv, admit) -> Packet:
    intent = frame.intent
    phase = ep.phase

    if phase is Phase.IDLE_AWAITING:
        if intent is Intent.IDLE:
            return _take_turn(ep, q_send)
        if frame.is_data_offer:
            return _on_offer(ep, frame, q_recv, admit)
        _violation(ep, f"{frame.label} while idle")

    if phase is Phase.OFFER_SENT:
        p = ep.send_register
        if intent is Intent.ACCEPT:
            if frame.key != p.key:
                _violation(ep, f"ACCEPT for {frame.key} but offered {p.key}")
            q.retire_sent(q_send, *p.key)
            tick_clocks(ep, "action")
            ep.send_register = None
            ep.confirm_key = p.key
            ep.phase = Phase.CONFIRM_SENT
            ep.retry_count = 0
            return _emit(ep, codec.idle(ep.direction))
        if frame.is_nack:
            ep.retry_count += 1
            if ep.retry_count <= ep.retry_limit:
                return _emit(ep, codec.offer(ep.direction, p))
            q.unsend(q_send, *p.key)
            ep.notices.append(("backpressure", p.key))
            ep.send_register = None
            ep.retry_count = 0
            ep.phase = Phase.IDLE_AWAITING
            return _emit(ep, codec.idle(ep.direction))
        _violation(ep, f"{frame.label} while waiting for ACCEPT/NACK")

    if phase is Phase.OFFER_HELD:
        if intent is Intent.IDLE:
            p = ep.recv_register
            fresh = q.reveal(q_recv, *p.key)
            tick_clocks(ep, "action")
            ep.recv_register = None
            ep.phase = Phase.IDLE_AWAITING
            out = _emit(ep, codec.idle(ep.direction))
            if fresh:
                tick_clocks(ep, "cycle")
                ep.notices.append(("revealed", p.key))
            return out
        _violation(ep, f"{frame.label} while holding an accepted offer")

    if phase is Phase.CONFIRM_SENT:
        if intent is Intent.IDLE:
            done = ep.confirm_key
            ep.confirm_key = None
            q.confirm_sent(q_send, *done)
            tick_clocks(ep, "action")
            ep.phase = Phase.IDLE_AWAITING
            out = _emit(ep, codec.idle(ep.direction))
            tick_clocks(ep, "cycle")
            ep.notices.append(("delivered", done))
            return out
        _violation(ep, f"{frame.label} while waiting for the reveal acknowledgement")

    _violation(ep, f"no transition from {phase.value}")


def _on_offer(ep, frame, q_recv, admit) -> Packet:
    if admit is not None and not admit(frame):
        return _emit(ep, codec.nack(ep.direction, *frame.key))
    try:
        q.hold_unrevealed(q_recv, frame)
    except QueueFull:
        return _emit(ep, codec.nack(ep.direction, *frame.key))
    tick_clocks(ep, "action")
    ep.recv_register = frame
    ep.phase = Phase.OFFER_HELD
    return _emit(ep, codec.accept(ep.direction, *frame.key))


def receive_bytes(ep: LinkEndpoint, data: bytes, q_send, q_recv, admit=None) -> Packet:
    """Decode a raw frame and feed it to on_receive; undecodable frames kill the link."""
    try:
        frame = codec.decode_frame(data)
    except CodecError as exc:
        if ep.alive:
            _violation(ep, f"undecodable frame: {exc}")
        raise ProtocolViolation(f"{ep.name}: undecodable frame: {exc}") from exc
    return on_receive(ep, frame, q_send, q_recv, admit)


def restart(ep: LinkEndpoint, seed=None, q_send: q.ObservableQueue | None = None) -> LinkEndpoint:
    """Clear the registers and return to BOOTSTRAPPING.

    Legal from any phase.  Queue contents survive; in-flight and
    unconfirmed packets become re-offerable.
    """
    if seed is not None:
        ep.rng.seed(seed)
    ep.role = Role.UNASSIGNED
    ep.phase = Phase.BOOTSTRAPPING
    ep.send_register = None
    ep.recv_register = None
    ep.retry_count = 0
    ep.last_sent = None
    ep.confirm_key = None
    ep.death_reason = None
    if q_send is not None:
        q.restart_reset(q_send)
    return ep


def is_quiescent(ep: LinkEndpoint, q_send: q.ObservableQueue, q_recv: q.ObservableQueue) -> bool:
    """No cycle is open at this endpoint and nothing awaits confirmation."""
    if ep.phase not in IDLE_PHASES:
        return False
    if any(e.state in (q.EntryState.IN_FLIGHT, q.EntryState.RETIRED) or e.resend for e in q_send.entries):
        return False
    return not any(e.state is q.EntryState.HELD_UNREVEALED for e in q_recv.entries)
