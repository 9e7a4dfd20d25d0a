"""Exception taxonomy shared by every module.

Each public operation raises one of these categories so the CLI can map
failures to stable exit codes (see cli.EXIT_*).
"""


class OdconvError(Exception):
    """Base class for all library errors."""


class ShapeError(OdconvError):
    """Operand shapes violate an operation's contract."""


class SizeError(OdconvError):
    """Requested element count overflows the platform index type."""


class ParameterError(OdconvError):
    """A hyperparameter is outside its legal domain (e.g. T <= 0, r > 1)."""


class ContractError(OdconvError):
    """An API precondition unrelated to shapes was violated."""


class NumericError(OdconvError):
    """A computation produced non-finite values."""


class ArchError(OdconvError):
    """An architecture description file is malformed or inconsistent."""


class FormatError(OdconvError):
    """A serialized file (checkpoint, architecture, config) is malformed."""


class TopologyError(OdconvError):
    """A checkpoint's topology digest does not match the target model."""


class VerificationError(OdconvError):
    """A verification property failed."""
