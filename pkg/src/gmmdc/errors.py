"""Exception types raised by the estimation and inference routines."""


class GmmError(Exception):
    """Base class for numerical failures in estimation or inference."""


class SingularWeightError(GmmError):
    """A weight matrix is not positive definite within tolerance."""


class SingularNormalMatrixError(GmmError):
    """G_n' Xi^-1 G_n is numerically singular (condition number > 1e12)."""


class IllConditionedCorrectionError(GmmError):
    """(I - D_hat) is too ill-conditioned to invert (condition number > 1e12)."""


class DegenerateVarianceError(GmmError):
    """A requested standard error is zero or not available."""


class JNotDefinedError(GmmError):
    """The overidentification test requires q > k."""
