"""Exception types shared across the package."""


class CdgnetError(Exception):
    """Base class for all package errors."""


class ShapeError(CdgnetError):
    """A tensor dimension does not satisfy an operation's contract.

    The message always names the offending axis.
    """


class ConfigError(CdgnetError):
    """Invalid configuration key or value."""


class InputError(CdgnetError):
    """Caller-supplied data violates a precondition (e.g. extents not divisible by 4)."""


class CheckpointError(CdgnetError):
    """Checkpoint file is malformed or incompatible with the current model."""


class GradCheckError(CdgnetError):
    """Non-finite value encountered during finite-difference verification."""
