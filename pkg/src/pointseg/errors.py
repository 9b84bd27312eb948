"""Exception hierarchy shared by all modules."""


class PointsegError(Exception):
    """Base class for all package errors."""


class GridError(PointsegError):
    """Malformed raster, codec payload, or violated grid invariant."""


class SceneError(PointsegError):
    """Scene generation or corruption failure."""


class PipelineError(PointsegError):
    """Label-synthesis pipeline failure (S2I, I2S, training loop)."""


class LossError(PointsegError):
    """Loss evaluated on an empty or inconsistent input."""


class EvalError(PointsegError):
    """Undefined metric request."""


class CliUsageError(PointsegError):
    """Bad command line; maps to exit code 1."""
