"""Error types shared by all engine modules."""


class ConfigurationError(ValueError):
    """Invalid run or solver configuration (bad sizes, unknown keys, ...)."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an evaluator."""


class GridAlignmentError(ValueError):
    """A time was requested off the discretization grid; no interpolation."""


class IncompleteInputError(ValueError):
    """A required branch value was not supplied."""


class PreconditionError(ValueError):
    """A documented theorem/operation hypothesis is violated."""


class CapabilityError(RuntimeError):
    """The selected engine cannot perform the requested evaluation."""


class SolverError(RuntimeError):
    """Numerical failure inside the regression solver."""


class ModelDegeneracyError(RuntimeError):
    """A finite model reached a state excluded by strict positivity."""


class NumericError(RuntimeError):
    """A numerical routine diverged or returned non-finite values."""
