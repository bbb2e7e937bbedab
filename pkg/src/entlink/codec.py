"""Link signal headers and packet frames.

Every signal on the link carries a 3-bit header vector: two intent bits
followed by one direction bit.  Six of the eight patterns are legal; the
remaining two only appear when the line has been corrupted.

Frame layout (big-endian, see WIRE.md)::

    header(1) | flags(1) | message_id(4) | seq(4) | length(2) | payload

Only the three low bits of the header byte are used, bit k holding
component b_k of the header vector.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .errors import FrameError, InvalidCodeword


class Intent(enum.Enum):
    IDLE = "0"
    OFFER = "+"
    ACCEPT = "-"


class Direction(enum.Enum):
    L2R = 0
    R2L = 1

    def complement(self) -> "Direction":
        return Direction.R2L if self is Direction.L2R else Direction.L2R


@dataclass(frozen=True, order=True)
class HeaderVector:
    """Three header bits: b0 intent-high, b1 intent-low, b2 direction."""

    b0: int
    b1: int
    b2: int

    def __post_init__(self):
        for bit in (self.b0, self.b1, self.b2):
            if bit not in (0, 1):
                raise ValueError(f"header bits must be 0 or 1, got {self.bits}")

    @property
    def bits(self) -> tuple[int, int, int]:
        return (self.b0, self.b1, self.b2)

    @classmethod
    def from_bits(cls, bits) -> "HeaderVector":
        b0, b1, b2 = bits
        return cls(int(b0), int(b1), int(b2))

    def to_byte(self) -> int:
        return self.b0 | (self.b1 << 1) | (self.b2 << 2)

    @classmethod
    def from_byte(cls, value: int) -> "HeaderVector":
        if value & ~0x07:
            raise FrameError(f"header byte 0x{value:02x} uses reserved bits")
        return cls(value & 1, (value >> 1) & 1, (value >> 2) & 1)

    @property
    def is_valid(self) -> bool:
        return self in _DECODE

    @property
    def label(self) -> str:
        try:
            return _LABELS[self]
        except KeyError:
            raise InvalidCodeword(f"no signal has header {self.bits}") from None

    def __str__(self):
        return "".join(str(b) for b in self.bits)


_ENCODE = {
    (Direction.L2R, Intent.IDLE): HeaderVector(0, 0, 0),
    (Direction.R2L, Intent.IDLE): HeaderVector(1, 1, 1),
    (Direction.L2R, Intent.OFFER): HeaderVector(1, 0, 0),
    (Direction.R2L, Intent.OFFER): HeaderVector(1, 0, 1),
    (Direction.L2R, Intent.ACCEPT): HeaderVector(0, 1, 0),
    (Direction.R2L, Intent.ACCEPT): HeaderVector(0, 1, 1),
}
_DECODE = {h: key for key, h in _ENCODE.items()}

_LABELS = {
    HeaderVector(0, 0, 0): "L-TICK",
    HeaderVector(1, 1, 1): "R-TICK",
    HeaderVector(1, 0, 0): "L-TECK",
    HeaderVector(1, 0, 1): "R-TECK",
    HeaderVector(0, 1, 0): "L-TACK",
    HeaderVector(0, 1, 1): "R-TACK",
}

ALL_PATTERNS = tuple(HeaderVector(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1))
VALID_CODEWORDS = tuple(_ENCODE.values())


def encode_header(direction: Direction, intent: Intent) -> HeaderVector:
    return _ENCODE[(direction, intent)]


def decode_header(h: HeaderVector) -> tuple[Direction, Intent]:
    try:
        return _DECODE[h]
    except KeyError:
        raise InvalidCodeword(f"header {h.bits} is not a signal codeword") from None


def complement(h: HeaderVector) -> HeaderVector:
    """One's complement of every component."""
    return HeaderVector(1 - h.b0, 1 - h.b1, 1 - h.b2)


@dataclass(frozen=True)
class Packet:
    """One link signal: header plus (message_id, seq) and an optional payload.

    An OFFER header with an empty payload is a NACK.  IDLE and ACCEPT
    headers never carry payload.
    """

    header: HeaderVector
    message_id: int = 0
    seq: int = 0
    payload: bytes = b""
    last: bool = False

    def __post_init__(self):
        direction, intent = decode_header(self.header)
        if intent is not Intent.OFFER and self.payload:
            raise FrameError(f"{self.header.label} may not carry a payload")
        if not (0 <= self.message_id < 2**32 and 0 <= self.seq < 2**32):
            raise FrameError("message_id and seq must fit in 32 bits")
        if len(self.payload) > 0xFFFF:
            raise FrameError("payload longer than 65535 bytes")

    @property
    def direction(self) -> Direction:
        return decode_header(self.header)[0]

    @property
    def intent(self) -> Intent:
        return decode_header(self.header)[1]

    @property
    def is_nack(self) -> bool:
        return self.intent is Intent.OFFER and not self.payload

    @property
    def is_data_offer(self) -> bool:
        return self.intent is Intent.OFFER and bool(self.payload)

    @property
    def key(self) -> tuple[int, int]:
        return (self.message_id, self.seq)

    @property
    def label(self) -> str:
        side = self.header.label[0]
        if self.is_nack:
            return f"{side}-NACK"
        return self.header.label

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "header": str(self.header),
            "message_id": self.message_id,
            "seq": self.seq,
            "last": self.last,
            "payload": self.payload.hex(),
        }


def signal(direction: Direction, intent: Intent, message_id=0, seq=0, payload=b"", last=False) -> Packet:
    return Packet(encode_header(direction, intent), message_id, seq, payload, last)


def idle(direction: Direction) -> Packet:
    return signal(direction, Intent.IDLE)


def nack(direction: Direction, message_id=0, seq=0) -> Packet:
    return signal(direction, Intent.OFFER, message_id, seq)


def accept(direction: Direction, message_id=0, seq=0) -> Packet:
    return signal(direction, Intent.ACCEPT, message_id, seq)


def offer(direction: Direction, p: Packet) -> Packet:
    """Re-address a queued packet as an OFFER travelling in ``direction``."""
    return signal(direction, Intent.OFFER, p.message_id, p.seq, p.payload, p.last)


_FIXED = struct.Struct(">BBIIH")
FLAG_LAST = 0x01


def encode_frame(p: Packet) -> bytes:
    flags = FLAG_LAST if p.last else 0
    return _FIXED.pack(p.header.to_byte(), flags, p.message_id, p.seq, len(p.payload)) + p.payload


def decode_frame(data: bytes) -> Packet:
    if len(data) < _FIXED.size:
        raise FrameError(f"frame of {len(data)} bytes is shorter than the {_FIXED.size}-byte header")
    hbyte, flags, message_id, seq, length = _FIXED.unpack_from(data)
    if flags & ~FLAG_LAST:
        raise FrameError(f"flags byte 0x{flags:02x} uses reserved bits")
    payload = bytes(data[_FIXED.size:])
    if len(payload) != length:
        raise FrameError(f"length field says {length} bytes, frame has {len(payload)}")
    header = HeaderVector.from_byte(hbyte)
    decode_header(header)
    return Packet(header, message_id, seq, payload, bool(flags & FLAG_LAST))


def flip_bit(frame: bytes, bit_index: int) -> bytes:
    """Flip one bit; bit k lives in byte k // 8 at position k % 8 (LSB first)."""
    if not 0 <= bit_index < 8 * len(frame):
        raise IndexError(f"bit {bit_index} outside a {len(frame)}-byte frame")
    out = bytearray(frame)
    out[bit_index // 8] ^= 1 << (bit_index % 8)
    return bytes(out)


# Header-level legality: (intent of our last signal, kind of the reply).
# A reply kind is an Intent, or "NACK" for an empty OFFER.
_LEGAL_REPLIES = {
    "IDLE": {"IDLE", "OFFER"},
    "OFFER": {"ACCEPT", "NACK"},
    "NACK": {"OFFER", "IDLE"},
    "ACCEPT": {"IDLE"},
}


def _kind(p: Packet) -> str:
    return "NACK" if p.is_nack else p.intent.name


def is_valid_reflection(sent: Packet, received: Packet) -> bool:
    """Whether ``received`` is a legal answer to our outbound ``sent``.

    The reply must travel the other way and fit the legal-reply table.
    Plain reflections are exact complements.  The table also admits an
    offer grafted onto an idle slot and the confirm that follows an ACCEPT;
    a NACK may answer an OFFER, and a retried offer may answer a NACK.
    """
    if received.direction is sent.direction:
        return False
    return _kind(received) in _LEGAL_REPLIES[_kind(sent)]


@dataclass(frozen=True)
class Message:
    message_id: int
    payload: bytes
