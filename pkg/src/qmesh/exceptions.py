"""Exception hierarchy shared by every qmesh module."""


class QmeshError(Exception):
    """Base class for all qmesh errors."""


class ValidationError(QmeshError, ValueError):
    """Input failed a precondition check."""


class CapacityError(ValidationError):
    """Requested register exceeds the configured qubit cap."""


class QubitIndexError(QmeshError, IndexError):
    """A qubit index is out of range or repeated."""


class SchemaError(ValidationError):
    """A tabular input is missing a required column."""


class StratificationError(ValidationError):
    """A class has too few records to split."""


class TrainingError(QmeshError, FloatingPointError):
    """The optimizer produced a non-finite cost."""
