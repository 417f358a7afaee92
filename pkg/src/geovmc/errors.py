"""Exception types raised across the package."""


class GeoVMCError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GeoVMCError, ValueError):
    """Invalid molecular configuration, run configuration or file contents."""


class NodeError(GeoVMCError, ArithmeticError):
    """The wave function vanishes where a derivative or ratio was requested."""


class SingularityError(GeoVMCError, ArithmeticError):
    """Two charged particles coincide in the Coulomb potential."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class NumericalError(GeoVMCError, ArithmeticError):
    """Non-finite values appeared during an iterative solve."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CheckpointError(GeoVMCError):
    """Checkpoint cannot be read or belongs to an incompatible format version."""
