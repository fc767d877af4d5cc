"""Exception types raised across the toolkit."""


class WakeSurrogateError(Exception):
    """Base class for all toolkit errors."""


class GeometryDegenerate(WakeSurrogateError, ValueError):
    """LiDAR beam is (nearly) orthogonal to the wind direction."""


class RowAllMissing(WakeSurrogateError, ValueError):
    """A full grid row has no valid sample to interpolate from."""


class ShapeMismatch(WakeSurrogateError, ValueError):
    pass


class NonFiniteActivation(WakeSurrogateError, FloatingPointError):
    pass


class DivergedLoss(WakeSurrogateError, FloatingPointError):
    pass


class CholeskyFailure(WakeSurrogateError, ArithmeticError):
    """Covariance matrix not positive definite even after jitter escalation."""


class NonFiniteLikelihood(WakeSurrogateError, FloatingPointError):
    pass


class PoolExhausted(WakeSurrogateError, ValueError):
    """Not enough unselected candidates left in the pool."""


class DegenerateVariance(WakeSurrogateError, ValueError):
    pass


class TestSetMismatch(WakeSurrogateError, ValueError):
    __test__ = False  # keep pytest from collecting this as a test class


class ConfigError(WakeSurrogateError, ValueError):
    pass


class ModelFileError(WakeSurrogateError, ValueError):
    pass
