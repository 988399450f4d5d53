"""
Exception hierarchy shared by every waveblur module.

Each error also derives from the closest builtin so callers that only know
about ``ValueError`` or ``IndexError`` keep working.
"""


class WaveblurError(Exception):
    """Base class for all waveblur errors."""


class UnsupportedOrderError(WaveblurError, ValueError):
    """Requested number of vanishing moments has no available filter."""


class BadShapeError(WaveblurError, ValueError):
    """Array shapes or grid sizes are inconsistent."""


class BadIndexError(WaveblurError, IndexError):
    """A wavelet index does not exist for the given grid and levels."""


class BadSpecError(WaveblurError, ValueError):
    """A kernel field or bound specification is incomplete or invalid."""


class SingularCovarianceError(WaveblurError, ArithmeticError):
    """A Gaussian covariance is not positive definite."""


class TooLargeError(WaveblurError, ValueError):
    """A dense assembly would exceed the configured budget."""


class CorruptFileError(WaveblurError, ValueError):
    """A binary or image file is truncated or has a bad header."""


class BadSchemeError(WaveblurError, ValueError):
    """Unknown weighting scheme."""


class BudgetExceededError(WaveblurError, RuntimeError):
    """A requested budget cannot be reached with the available candidates."""


class BadLayoutError(WaveblurError, ValueError):
    """Invalid window layout for the windowed-convolution baseline."""


class ConfigError(WaveblurError, ValueError):
    """Experiment configuration could not be loaded or validated."""


class UnsupportedFormatError(WaveblurError, ValueError):
    """Image file is not a square power-of-two grayscale PGM or PNG."""
