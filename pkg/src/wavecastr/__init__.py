"""Reservoir-computing forecasts of quantum wavepacket dynamics.

Modules: ``qdyn`` (grids, potentials, split-operator propagation), ``esn``
(complex echo-state networks), ``spectral`` (correlation spectra and
eigenstates), ``bench`` (end-to-end experiments), ``cli`` (command line).
"""
from .errors import (ConvergenceError, DivergenceError, FormatError, SpectralError,
                     TrainingError, WavecastrError)

__version__ = "0.1.0"

__all__ = ["ConvergenceError", "DivergenceError", "FormatError", "SpectralError",
           "TrainingError", "WavecastrError", "__version__"]
