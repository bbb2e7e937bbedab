"""Exception hierarchy for the entangled-link library."""


class EntlinkError(Exception):
    """Base class for every error raised by this package."""


class CodecError(EntlinkError):
    pass


class InvalidCodeword(CodecError):
    """A 3-bit header pattern outside the six legal codewords."""


class FrameError(CodecError):
    """A byte frame that cannot be decoded (short, bad length, payload discipline)."""


class QueueFull(EntlinkError):
    pass


class NoSuchEntry(EntlinkError):
    pass


class EntanglementLoss(EntlinkError):
    """The two ends of a link no longer agree; the link must be re-established."""


class ConflictingDuplicate(EntanglementLoss):
    """Same (message_id, seq) seen twice with different payloads."""


class ProtocolViolation(EntanglementLoss):
    """Illegal frame for the endpoint's phase, or a failed reflection check."""


class ConflictingFragment(EntanglementLoss):
    pass


class InsufficientData(EntlinkError):
    pass


class ConfigError(EntlinkError):
    pass


class ParseError(ConfigError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class UnknownKey(ParseError):
    pass


class StateSpaceOverflow(EntlinkError):
    pass
