"""Exception types shared across the package."""


class DDISError(Exception):
    """Base class for all package errors."""


class InvalidArgument(DDISError, ValueError):
    """An argument violates a documented precondition."""


class UnsupportedBoundary(DDISError, ValueError):
    """The operation is not defined for the grid's boundary type."""


class ResonanceError(DDISError, ArithmeticError):
    """A Helmholtz wavenumber hits (or nearly hits) a Dirichlet eigenvalue."""

    def __init__(self, k, mode):
        self.k = k
        self.mode = mode
        super().__init__(f"wavenumber k={k!r} is resonant with sine mode (m, n)={mode}")


class StabilityError(DDISError, ValueError):
    """An explicit time step exceeds the linear stability bound."""

    def __init__(self, dt, bound):
        self.dt = dt
        self.bound = bound
        super().__init__(
            f"dt={dt:.3e} violates the Euler-Maruyama stability bound dt < {bound:.3e}; "
            f"try dt <= {0.1 * bound:.3e}"
        )


class UndefinedMetric(DDISError, ValueError):
    """A metric is undefined for the given inputs (e.g. zero reference)."""


class FormatError(DDISError, ValueError):
    """A serialized file is malformed."""
