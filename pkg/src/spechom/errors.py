"""Exception types shared across the package."""


class SpecHomError(Exception):
    """Base class for runtime failures raised by spechom."""


class GeometryMismatchError(SpecHomError):
    """A field or mask does not match the environment geometry."""


class MaskError(SpecHomError):
    """A mask cannot be built or fails its normalization contract."""


class OversizeCellError(SpecHomError):
    """A dense-oracle operation was requested on a cell above the size cap."""


class ConvergenceError(SpecHomError):
    """An iterative solve did not reach the requested residual.

    Carries the achieved relative residual and the iteration count so
    callers can report how far the solve got.
    """

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations
