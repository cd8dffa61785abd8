"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes (see cli.EXIT_CODES), so every failure
mode a command can hit should raise one of the classes below rather than a
bare ValueError.
"""


class ShapeError(ValueError):
    """Tensor/batch dimensions do not line up."""


class ParameterError(ValueError):
    """An argument violates its stated domain (negative sigma, K < 2, ...)."""


class SpecError(ValueError):
    """A network/study/autoencoder specification is internally inconsistent."""


class StateError(RuntimeError):
    """Operation requires state the object does not have (e.g. untrained model)."""


class ParseError(ValueError):
    """A binary or text input file is malformed; message names the byte offset."""


class DataError(ValueError):
    """Dataset-level problem: mismatched pair shapes, pool too small, empty data."""


class SplitError(DataError):
    """A requested dataset split cannot be constructed (empty part, bad fractions)."""


class DegenerateInputError(DataError):
    """Detection metrics need at least one positive and one negative."""


class CalibrationError(ValueError):
    """Threshold target unachievable; carries the best achievable value."""

    def __init__(self, message, best_achievable=None):
        super().__init__(message)
        self.best_achievable = best_achievable


class NumericError(RuntimeError):
    """Non-finite values appeared where the contract requires finite ones."""


class TrainingDiverged(RuntimeError):
    """Training loss went non-finite; carries the last epoch with a finite loss."""

    def __init__(self, message, last_finite_epoch=0, failed_members=None):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch
        self.failed_members = failed_members or []


class ConfigError(ValueError):
    """Run configuration is invalid (missing paths, absent seed, unknown keys)."""


class InvariantError(RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""
