"""Exception hierarchy shared across the package.

Two families, matching the CLI exit-code contract: ``InputError`` covers bad
inputs and violated preconditions (exit code 2), ``SolverError`` covers
numerical and estimation failures (exit code 3).
"""


class InputError(ValueError):
    """Invalid input data or violated precondition."""


class SolverError(RuntimeError):
    """Numerical or estimation failure."""


class OutOfBoundsError(InputError):
    """Pixel location outside the depth-grid bounds."""


class InsufficientSupportError(InputError):
    """Not enough points/pixels to perform the requested operation."""


class DegenerateConfigurationError(SolverError):
    """Lifted point stack is rank deficient; the camera solve is underdetermined."""

    def __init__(self, message: str, rank: int | None = None):
        super().__init__(message)
        self.rank = rank


class NoConsensusError(SolverError):
    """No RANSAC hypothesis reached the minimum inlier count."""


class IllConditionedJacobianError(SolverError):
    """Camera jacobian is unreliable: repeated singular values or rank deficiency."""


class DegenerateAlignmentError(SolverError):
    """Depth alignment is undefined (empty mask or constant prediction)."""


class DivisionHazardError(SolverError):
    """Relative metrics would divide by a near-zero ground-truth depth."""


class RenderNotConvergedError(SolverError):
    """A view is too oblique for the surface to remain a single-valued height field."""
