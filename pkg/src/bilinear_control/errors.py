"""Exception hierarchy shared by the solver modules and the CLI."""


class BilinearControlError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(BilinearControlError, ValueError):
    """Grid, time grid or array shapes do not line up."""


class ConfigurationError(BilinearControlError, ValueError):
    """An invalid parameter or an incompatible model/control combination."""


class UnsupportedError(BilinearControlError):
    """The operation is not defined for the given model (e.g. distributed control)."""


class PreconditionError(BilinearControlError):
    """A mathematical hypothesis required by an operation does not hold."""


class DivergenceError(BilinearControlError, ArithmeticError):
    """A state became non-finite or exceeded the divergence threshold."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
