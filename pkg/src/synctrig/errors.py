"""Exception hierarchy shared by every module."""


class SyncTrigError(Exception):
    """Base class for all errors raised by synctrig."""


class ConfigurationError(SyncTrigError, ValueError):
    """A configuration value violates its documented invariant."""


class TopologyError(SyncTrigError):
    """The topology is malformed or a requested path does not exist."""


class TapSaturationError(SyncTrigError):
    """The delay chain is already at its last tap."""


class CalibrationError(SyncTrigError):
    """No stable region exists: every tap was flagged."""


class InsufficientDataError(SyncTrigError, ValueError):
    """Too few samples to compute the requested statistic."""


class InvariantViolation(SyncTrigError, AssertionError):
    """An internal consistency check failed."""


class ProtocolError(SyncTrigError):
    """Base class for command-protocol rejections."""


class RoleError(ProtocolError):
    """The command is not legal for the device's role."""


class SequencingError(ProtocolError):
    """The command arrived out of the required order."""
