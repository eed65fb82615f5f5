"""Exception types shared across the toolkit."""


class NoiseGridError(Exception):
    """Base class for all noisegrid errors."""


class ImageError(NoiseGridError):
    """Unreadable, unsupported, or dimensionally invalid image data."""


class ConfigError(NoiseGridError):
    """Invalid pipeline configuration or config-hash mismatch."""


class DataError(NoiseGridError):
    """Invalid input data for an operation (bad rects, missing files, ...)."""


class ZeroVarianceError(NoiseGridError):
    """Degenerate constant data where a variance-based quantity is undefined."""


class ConvergenceError(NoiseGridError):
    """An iterative solver diverged (e.g. NaN training loss)."""


class UndefinedMetricError(NoiseGridError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""
