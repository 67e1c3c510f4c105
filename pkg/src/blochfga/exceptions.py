"""Exception and warning classes raised across the package."""


class BlochFGAError(Exception):
    """Base class for all package errors."""


class InvalidPotentialError(BlochFGAError, ValueError):
    pass


class InvalidConfigError(BlochFGAError, ValueError):
    pass


class EigensolverError(BlochFGAError, RuntimeError):
    """Diagonalisation failed at a given crystal momentum."""

    def __init__(self, xi, message="eigensolver failed"):
        self.xi = xi
        super().__init__(f"{message} at xi={xi!r}")


class SingularZError(BlochFGAError, FloatingPointError):
    """The complex Jacobian combination Z came too close to zero."""

    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"|Z| = {abs(value):.3e} < 1e-8 on trajectory {index}")


class OverlapTooSmallError(BlochFGAError, RuntimeError):
    """Consecutive Bloch states overlap too little for the Wilson factor."""

    def __init__(self, band, step, modulus, index=None):
        self.band = band
        self.step = step
        self.modulus = modulus
        self.index = index
        where = f" (trajectory {index})" if index is not None else ""
        super().__init__(
            f"overlap modulus {modulus:.3e} below floor for band {band} at step {step}{where}; "
            "time step too large or band crossing"
        )


class ResolutionError(BlochFGAError, ValueError):
    pass


class GridMismatchError(BlochFGAError, ValueError):
    pass


class BandCrossingWarning(UserWarning):
    pass


class NearDegeneracyWarning(UserWarning):
    pass


class UnderResolvedWarning(UserWarning):
    pass
