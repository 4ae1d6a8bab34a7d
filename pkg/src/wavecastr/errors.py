"""Exception hierarchy shared across the package.

The CLI maps ``FormatError`` to exit code 3 and every other
``WavecastrError`` to exit code 1.
"""


class WavecastrError(Exception):
    """Base class for domain failures."""


class FormatError(WavecastrError):
    """A file does not match the expected binary or text layout."""


class ConvergenceError(WavecastrError):
    """An iterative estimate did not reach its tolerance."""

    def __init__(self, message, best_estimate=None):
        super().__init__(message)
        self.best_estimate = best_estimate


class TrainingError(WavecastrError):
    """Reservoir training could not proceed."""


class DivergenceError(WavecastrError):
    """Closed-loop prediction produced a non-finite value."""

    def __init__(self, message, step, partial=None):
        super().__init__(message)
        self.step = step
        self.partial = partial


class SpectralError(WavecastrError):
    """Spectral analysis failed (empty spectrum, no support at an energy, ...)."""
