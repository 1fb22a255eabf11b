"""Exception hierarchy shared across the simulator."""


class QvoteError(Exception):
    pass


class InvalidArgument(QvoteError, ValueError):
    """Malformed input: wrong lengths, out-of-range parameters."""


class ProtocolViolation(QvoteError):
    """A party attempted something the protocol forbids (pad reuse, double measurement)."""


class ConfigError(QvoteError):
    pass


class Rejected(QvoteError):
    """A party refused a message. ``reason`` is a short machine-readable tag."""

    def __init__(self, reason, detail=""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class SessionAborted(QvoteError):
    """A key-distribution session stopped before producing a key."""

    def __init__(self, reason, **info):
        super().__init__(reason)
        self.reason = reason
        self.info = info
