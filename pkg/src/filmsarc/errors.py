"""Exception hierarchy shared by every subsystem.

Each class carries the CLI exit code it maps to so the command layer can
translate failures without a lookup table.
"""


class FilmSarcError(Exception):
    exit_code = 1


class ConfigError(FilmSarcError, ValueError):
    exit_code = 2


class DataError(FilmSarcError, ValueError):
    exit_code = 3


class NumericalError(FilmSarcError, ArithmeticError):
    exit_code = 4


class DimensionError(ConfigError):
    """Operand shapes are incompatible for the requested operation."""


class ShapeError(DimensionError):
    """Broadcast pattern outside the supported set."""


class MaskError(DataError):
    """Every position of a pooled or attended axis is masked."""


class VocabularyError(DataError):
    pass


class ContractError(FilmSarcError, ValueError):
    """Inputs violate an operation's preconditions (empty or mismatched data)."""

    exit_code = 3


class StateError(FilmSarcError, RuntimeError):
    pass


class CheckpointError(ConfigError):
    pass
