"""Scenario files: sectioned ``key = value`` text.  See SCENARIO.md."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ParseError, UnknownKey

DIRECTIONS = ("A->B", "B->A")
FAULT_KINDS = ("STALL", "UNSTALL", "KILL", "BITFLIP", "WIRETAP_INSERT", "RECEIVER_PRESSURE")
WIRETAP_MODES = ("pass", "masquerade")


@dataclass(frozen=True)
class MessageSpec:
    at: int
    direction: str
    payload: bytes
    count: int = 1
    every: int = 1


@dataclass(frozen=True)
class FaultSpec:
    at: int
    kind: str
    bit: int | None = None
    mode: str | None = None
    probability: float | None = None
    seed: int | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 1
    fragment_size: int = 64
    queue_capacity: int = 16
    latency_l2r: int = 1
    latency_r2l: int = 1
    watchdog: bool = True
    watchdog_timeout: int = 64
    watchdog_poll: int = 8
    retry_limit: int = 8
    duration: int = 1000
    max_events: int = 0
    workload: tuple[MessageSpec, ...] = ()
    faults: tuple[FaultSpec, ...] = ()

    def __post_init__(self):
        validate(self)

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)


_POSITIVE = ("fragment_size", "queue_capacity", "latency_l2r", "latency_r2l",
             "watchdog_timeout", "watchdog_poll", "duration")
_NON_NEGATIVE = ("retry_limit", "max_events")
_TOP_KEYS = {f.name for f in fields(ScenarioConfig)} - {"workload", "faults"}


def validate(cfg: ScenarioConfig):
    for name in _POSITIVE:
        if getattr(cfg, name) < 1:
            raise ParseError(f"{name} must be positive, got {getattr(cfg, name)}")
    for name in _NON_NEGATIVE:
        if getattr(cfg, name) < 0:
            raise ParseError(f"{name} must be non-negative, got {getattr(cfg, name)}")
    for m in cfg.workload:
        if m.direction not in DIRECTIONS:
            raise ParseError(f"direction must be one of {DIRECTIONS}, got {m.direction!r}")
        if m.at < 0 or m.count < 1 or m.every < 1:
            raise ParseError("message needs at >= 0, count >= 1, every >= 1")
    for f in cfg.faults:
        if f.kind not in FAULT_KINDS:
            raise ParseError(f"unknown fault kind {f.kind!r}")
        if f.at < 0:
            raise ParseError("fault time must be non-negative")
        if f.kind == "BITFLIP" and (f.bit is None or f.bit < 0):
            raise ParseError("BITFLIP needs bit >= 0")
        if f.kind == "WIRETAP_INSERT" and (f.mode or "pass") not in WIRETAP_MODES:
            raise ParseError(f"wiretap mode must be one of {WIRETAP_MODES}")
        if f.kind == "RECEIVER_PRESSURE":
            if f.probability is None or not 0 <= f.probability <= 1:
                raise ParseError("RECEIVER_PRESSURE needs 0 <= probability <= 1")


def _bool(text: str) -> bool:
    v = text.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def generated_payload(size: int, salt: int = 0) -> bytes:
    return bytes((i * 31 + 7 + salt) % 256 for i in range(size))


_MESSAGE_KEYS = {"at", "direction", "payload", "payload_hex", "size", "count", "every"}
_FAULT_KEYS = {"at", "kind", "bit", "mode", "probability", "seed"}


def _build_message(block: dict, lineno: int) -> MessageSpec:
    try:
        sources = [k for k in ("payload", "payload_hex", "size") if k in block]
        if len(sources) > 1:
            raise ParseError(f"message has several payload sources: {sources}", lineno)
        if "payload_hex" in block:
            payload = bytes.fromhex(block["payload_hex"][0])
        elif "size" in block:
            payload = generated_payload(int(block["size"][0]))
        else:
            payload = block.get("payload", ("",))[0].encode("utf-8")
        for key in ("at", "direction"):
            if key not in block:
                raise ParseError(f"message needs {key!r}", lineno)
        return MessageSpec(
            at=int(block["at"][0]),
            direction=block["direction"][0],
            payload=payload,
            count=int(block.get("count", ("1",))[0]),
            every=int(block.get("every", ("1",))[0]),
        )
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def _build_fault(block: dict, lineno: int) -> FaultSpec:
    for key in ("at", "kind"):
        if key not in block:
            raise ParseError(f"fault needs {key!r}", lineno)
    try:
        opt = lambda k, conv: conv(block[k][0]) if k in block else None  # noqa: E731
        return FaultSpec(
            at=int(block["at"][0]),
            kind=block["kind"][0].upper(),
            bit=opt("bit", int),
            mode=opt("mode", str),
            probability=opt("probability", float),
            seed=opt("seed", int),
        )
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None


def parse_config(text: str) -> ScenarioConfig:
    """Parse scenario text into a validated config; absent keys take defaults."""
    top: dict[str, object] = {}
    workload, faults = [], []
    section, block, block_line = None, {}, 0

    def close():
        if section == "message":
            workload.append(_build_message(block, block_line))
        elif section == "fault":
            faults.append(_build_fault(block, block_line))

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            close()
            name = line[1:-1].strip().lower()
            if name not in ("scenario", "message", "fault"):
                raise ParseError(f"unknown section [{name}]", lineno)
            section, block, block_line = (None if name == "scenario" else name), {}, lineno
            continue
        if "=" not in line:
            raise ParseError(f"expected key = value, got {line!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if section is None:
            if key not in _TOP_KEYS:
                raise UnknownKey(f"unknown key {key!r}", lineno)
            if key in top:
                raise ParseError(f"duplicate key {key!r}", lineno)
            try:
                top[key] = _bool(value) if key == "watchdog" else int(value)
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
        else:
            allowed = _MESSAGE_KEYS if section == "message" else _FAULT_KEYS
            if key not in allowed:
                raise UnknownKey(f"unknown key {key!r} in [{section}]", lineno)
            if key in block:
                raise ParseError(f"duplicate key {key!r}", lineno)
            block[key] = (value, lineno)
    close()
    try:
        return ScenarioConfig(**top, workload=tuple(workload), faults=tuple(faults))
    except ParseError:
        raise
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc)) from None


def render_config(cfg: ScenarioConfig) -> str:
    """Inverse of parse_config: text that parses back to an equal config."""
    lines = []
    for name in sorted(_TOP_KEYS, key=[f.name for f in fields(ScenarioConfig)].index):
        value = getattr(cfg, name)
        if isinstance(value, bool):
            value = "on" if value else "off"
        lines.append(f"{name} = {value}")
    for m in cfg.workload:
        lines += ["", "[message]", f"at = {m.at}", f"direction = {m.direction}",
                  f"payload_hex = {m.payload.hex()}", f"count = {m.count}", f"every = {m.every}"]
    for f in cfg.faults:
        lines += ["", "[fault]", f"at = {f.at}", f"kind = {f.kind}"]
        for key in ("bit", "mode", "probability", "seed"):
            value = getattr(f, key)
            if value is not None:
                lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"
