"""Exception hierarchy.

Every failure the package raises deliberately derives from GatadError so the
CLI can map it to an exit class. Anything else escaping is a genuine bug.
"""


class GatadError(Exception):
    """Base class for all deliberate failures."""


class DimensionError(GatadError):
    """Operand shapes do not conform (exact match required, scalars aside)."""


class DomainError(GatadError):
    """Value outside an operation's mathematical domain, or non-finite data."""


class ConfigError(GatadError):
    """Invalid or inconsistent configuration."""


class DataError(GatadError):
    """Input data violates a precondition (too short, empty, unreadable)."""


class StateError(GatadError):
    """Object used out of order, e.g. a computation tape consumed twice."""


class ContractError(GatadError):
    """API misuse: a call that is structurally wrong rather than bad data."""


class NumericError(GatadError):
    """Computation produced non-finite values where finite ones are required."""


class CorruptCheckpointError(DataError):
    """Checkpoint bytes cannot be parsed back into a manifest and blobs."""


class CheckpointVersionError(DataError):
    """Checkpoint was written by an unknown format version."""
