"""Energy spectra, eigenenergies and eigenfunctions from wavefunction trajectories.

Sign convention: a trajectory evolves as ``psi(t) = sum_n c_n exp(-i E_n t) phi_n``.
The correlation is taken as ``A(t) = <psi(0)|psi(t)>`` and every Fourier
transform uses the kernel ``exp(+i E t)``, so spectral peaks and extracted
states sit at the positive eigenenergies ``E_n``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial.hermite import hermval
from scipy.special import eval_genlaguerre

from . import formats
from .errors import SpectralError
from .qdyn import (Morse, Quartic, SpatialGrid, Trajectory,
                   Wavefunction, evaluate_potential, preset_system)

WINDOWS = ("hann", "rectangular")

# benchmark eigenenergies for the preset systems
BENCHMARK_ENERGIES = {
    "ho1d": (2.5, 3.5, 4.5, 5.5, 6.5, 7.5, 8.5, 9.5),
    "morse": (-6.8326, -6.5040, -6.1834, -5.8710, -5.5666, -5.2704, -4.9822,
              -4.7022, -4.4302, -4.1664, -3.9106, -3.6630, -3.4234, -3.1920),
    "quartic": (0.1556, 0.6187, 1.0800, 1.5426, 2.0087, 2.4801, 2.9582, 3.4453),
    "ho2d": (3.0946, 3.2838, 3.4730),
}

# quantum numbers of the benchmark levels, in the same order
BENCHMARK_LEVELS = {
    "ho1d": tuple(range(2, 10)),
    "morse": tuple(range(14)),
    "quartic": tuple(range(1, 9)),
    "ho2d": ((2, 0), (1, 1), (0, 2)),
}


@dataclass(frozen=True)
class CorrelationSeries:
    dt: float
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class EnergySpectrum:
    energies: np.ndarray
    intensities: np.ndarray
    window: str
    zero_pad_factor: int

    @property
    def delta_e(self) -> float:
        return float(self.energies[1] - self.energies[0])

    def to_csv(self) -> str:
        return formats.csv_text(["energy", "intensity"], zip(self.energies, self.intensities))


@dataclass(frozen=True)
class SpectralPeak:
    energy: float
    intensity: float
    interpolated: bool = True


@dataclass(frozen=True)
class EigenstateEstimate:
    energy: float
    wavefunction: Wavefunction
    overlap_with_reference: Optional[float] = None


def peaks_csv(peaks: Sequence[SpectralPeak]) -> str:
    return formats.csv_text(["energy", "intensity", "interpolated"],
                            ((p.energy, p.intensity, int(p.interpolated)) for p in peaks))


# -- correlation and spectrum ------------------------------------------------

def autocorrelation(traj: Trajectory) -> CorrelationSeries:
    """``A(t) = sum_j conj(psi_j(0)) psi_j(t) dV`` for every frame."""
    if not isinstance(traj, Trajectory):
        raise TypeError("autocorrelation expects a Trajectory")
    if len(traj) < 1:
        raise SpectralError("empty trajectory")
    values = (traj.frames @ traj.frames[0].conj()) * traj.grid.cell_volume
    return CorrelationSeries(traj.dt, values)


def _window(kind: str, n: int) -> np.ndarray:
    if kind == "hann":
        return np.hanning(n)
    if kind == "rectangular":
        return np.ones(n)
    raise ValueError(f"window must be one of {WINDOWS}, got {kind!r}")


def energy_spectrum(corr: CorrelationSeries, window: str = "hann",
                    zero_pad_factor: int = 8) -> EnergySpectrum:
    """``|I(E)|`` with ``I(E) = dt sum_t w(t) A(t) exp(i E t)`` on a uniform grid.

    The grid spacing is ``2 pi / (n dt zero_pad_factor)`` and the energies are
    returned in ascending order.
    """
    n = len(corr)
    if n < 16:
        raise ValueError(f"correlation series needs at least 16 samples, got {n}")
    if zero_pad_factor < 1:
        raise ValueError("zero_pad_factor must be >= 1")
    if corr.dt <= 0:
        raise ValueError("spectrum requires a forward-time series (dt > 0)")
    m = n * zero_pad_factor
    # ifft carries exp(+2 pi i k t / m) / m
    spec = np.fft.ifft(np.asarray(corr.values) * _window(window, n), m) * (m * corr.dt)
    energies = np.fft.fftshift(2 * np.pi * np.fft.fftfreq(m, d=corr.dt))
    return EnergySpectrum(energies, np.abs(np.fft.fftshift(spec)), window, zero_pad_factor)


def find_peaks(spec: EnergySpectrum, rel_threshold: float = 0.05) -> list[SpectralPeak]:
    """Strict local maxima above ``rel_threshold * max``, refined by a parabola.

    With ``rel_threshold = 1`` only the global maximum survives (lowest energy
    on ties).
    """
    if not 0.0 < rel_threshold <= 1.0:
        raise ValueError("rel_threshold must be in (0, 1]")
    I = np.asarray(spec.intensities)
    if I.size < 3 or not np.any(I > 0):
        raise SpectralError("empty spectrum: no positive intensity")
    top = I.max()
    i = np.arange(1, I.size - 1)
    loc = i[(I[i] > I[i - 1]) & (I[i] > I[i + 1]) & (I[i] >= rel_threshold * top)]
    if rel_threshold >= 1.0:
        loc = loc[:1]
    dE = spec.delta_e
    peaks = []
    for j in loc:
        a, b, c = I[j - 1], I[j], I[j + 1]
        curv = a - 2 * b + c
        shift = 0.5 * (a - c) / curv if curv < 0 else 0.0
        peaks.append(SpectralPeak(float(spec.energies[j] + shift * dE),
                                  float(b - 0.25 * (a - c) * shift), True))
    return peaks


# -- eigenfunctions ----------------------------------------------------------

def phase_fix(amplitudes: np.ndarray, dv: float = 1.0) -> np.ndarray:
    """Normalize and rotate so the largest-magnitude amplitude is real positive.

    Idempotent: a second application returns a bitwise-identical array.
    Near-ties in magnitude resolve to the first index so that rounding from the
    first pass cannot move the anchor.
    """
    a = np.array(amplitudes, dtype=np.complex128)
    nrm = np.sqrt(np.sum(np.abs(a) ** 2) * dv)
    if nrm == 0 or not np.isfinite(nrm):
        raise SpectralError("cannot normalize a zero or non-finite state")
    if abs(nrm - 1.0) > 1e-13:
        a /= nrm
    mag = np.abs(a)
    k = int(np.flatnonzero(mag >= mag.max() * (1 - 1e-9))[0])
    if not (a[k].imag == 0 and a[k].real > 0):
        a *= np.conj(a[k]) / mag[k]
        a[k] = mag[k]
    return a


def extract_eigenfunction(traj: Trajectory, energy: float, window: str = "hann",
                          reference: Optional[Wavefunction] = None) -> EigenstateEstimate:
    """``phi(x) = dt sum_t w(t) psi(x, t) exp(i E t)``, normalized and phase-fixed."""
    n = len(traj)
    if n < 2:
        raise SpectralError("extraction needs at least two frames")
    nyquist = np.pi / abs(traj.dt)
    if not abs(energy) < nyquist:
        raise ValueError(f"energy {energy} outside the resolvable range |E| < {nyquist:.4g}")
    w = _window(window, n)
    kernel = w * np.exp(1j * energy * traj.dt * np.arange(n)) * traj.dt
    phi = kernel @ traj.frames
    dv = traj.grid.cell_volume
    scale = abs(traj.dt) * np.sum(w * np.sqrt(np.sum(np.abs(traj.frames) ** 2, axis=1) * dv))
    nrm = np.sqrt(np.sum(np.abs(phi) ** 2) * dv)
    if not nrm > 1e-8 * scale:
        raise SpectralError(f"no support at energy {energy}: projected norm {nrm:.3g} "
                            f"vs trajectory scale {scale:.3g}")
    state = Wavefunction(traj.grid, phase_fix(phi, dv))
    ov = overlap(state, reference) if reference is not None else None
    return EigenstateEstimate(float(energy), state, ov)


def overlap(a: Wavefunction, b: Wavefunction) -> float:
    """``|<a|b>|`` on a shared grid, clipped to [0, 1]."""
    if a.grid != b.grid:
        raise ValueError("overlap requires both states on the same grid")
    val = abs(np.vdot(a.vector, b.vector)) * a.grid.cell_volume
    return float(min(val, 1.0))


# -- references --------------------------------------------------------------

def _system_potential(system: str):
    return preset_system(system).potential


def _hermite_function(n: int, x: np.ndarray, omega: float) -> np.ndarray:
    c = np.zeros(n + 1)
    c[n] = 1.0
    s = np.sqrt(omega) * x
    return ((omega / np.pi) ** 0.25 / np.sqrt(2.0 ** n * factorial(n))
            * hermval(s, c) * np.exp(-s * s / 2))


def _morse_state(p: Morse, n: int, x: np.ndarray) -> np.ndarray:
    lam = p.lam
    s = lam - n - 0.5
    z = 2 * lam * np.exp(-p.a * (x - p.x0))
    lag = eval_genlaguerre(n, 2 * s, z)
    with np.errstate(divide="ignore"):
        log_mag = s * np.log(z) - z / 2 + np.log(np.abs(lag))
    log_mag = np.where(lag == 0, -np.inf, log_mag)
    # evaluated in log space to avoid overflow of z**s; normalized on the grid later
    return np.sign(lag) * np.exp(log_mag - np.max(log_mag[np.isfinite(log_mag)]))


def _quartic_eigen(p: Quartic, grid: SpatialGrid):
    """Dense diagonalization with an FFT kinetic operator on ``grid``."""
    n = grid.size
    F = np.fft.fft(np.eye(n), axis=0)
    T = np.fft.ifft(grid.k_squared()[:, None] / 2 * F, axis=0)
    H = T + np.diag(evaluate_potential(p, grid))
    return np.linalg.eigh(0.5 * (H + H.conj().T))


def _check_1d_level(system: str, n) -> int:
    if isinstance(n, (tuple, list)) or int(n) != n or n < 0:
        raise ValueError(f"{system} expects a non-negative integer quantum number, got {n!r}")
    return int(n)


def _check_2d_level(n) -> tuple[int, int]:
    if not (isinstance(n, (tuple, list)) and len(n) == 2 and all(int(v) == v and v >= 0 for v in n)):
        raise ValueError(f"ho2d expects a pair (n_x, n_y) of non-negative integers, got {n!r}")
    return int(n[0]), int(n[1])


def reference_energy(system: str, quantum_numbers, potential=None) -> float:
    """Exact level of a preset system (``quartic`` by diagonalization on its preset grid)."""
    p = potential if potential is not None else _system_potential(system)
    if system == "ho1d":
        n = _check_1d_level(system, quantum_numbers)
        return p.omega * (n + 0.5)
    if system == "morse":
        n = _check_1d_level(system, quantum_numbers)
        if n >= p.n_bound:
            raise ValueError(f"Morse level {n} is unbound; only n < {p.n_bound} exist")
        v = n + 0.5
        return -p.De + p.a * np.sqrt(2 * p.De) * v - p.a ** 2 * v ** 2 / 2
    if system == "ho2d":
        nx, ny = _check_2d_level(quantum_numbers)
        return (nx + 0.5) * np.sqrt(p.omega_x_sq) + (ny + 0.5) * np.sqrt(p.omega_y_sq)
    if system == "quartic":
        n = _check_1d_level(system, quantum_numbers)
        vals, _ = _quartic_eigen(p, preset_system("quartic").grid)
        return float(vals[n])
    raise ValueError(f"unknown system {system!r}")


def reference_eigenfunction(system: str, quantum_numbers, grid: SpatialGrid,
                            potential=None) -> Wavefunction:
    """Normalized, phase-fixed exact eigenstate sampled on ``grid``."""
    p = potential if potential is not None else _system_potential(system)
    if system == "ho2d":
        if grid.ndim != 2:
            raise ValueError("ho2d reference needs a 2D grid")
        nx, ny = _check_2d_level(quantum_numbers)
        fx = _hermite_function(nx, grid.axes[0].points - p.x0, np.sqrt(p.omega_x_sq))
        fy = _hermite_function(ny, grid.axes[1].points - p.y0, np.sqrt(p.omega_y_sq))
        amp = np.outer(fx, fy).ravel()
    else:
        if grid.ndim != 1:
            raise ValueError(f"{system} reference needs a 1D grid")
        n = _check_1d_level(system, quantum_numbers)
        x = grid.axes[0].points
        if system == "ho1d":
            amp = _hermite_function(n, x - p.x0, p.omega)
        elif system == "morse":
            if n >= p.n_bound:
                raise ValueError(f"Morse level {n} is unbound; only n < {p.n_bound} exist")
            amp = _morse_state(p, n, x)
        elif system == "quartic":
            _, vecs = _quartic_eigen(p, grid)
            amp = vecs[:, n]
        else:
            raise ValueError(f"unknown system {system!r}")
    return Wavefunction(grid, phase_fix(amp, grid.cell_volume))


# -- peak matching -----------------------------------------------------------

def match_peaks(energies: Sequence[float], refs: Sequence[float], window: float | None = None):
    """Greedy nearest-neighbour pairing of found energies with reference levels.

    Candidate pairs closer than ``window`` (default: half the smallest gap
    between references; unbounded for a single reference) are accepted in order
    of increasing distance, each energy and reference used at most once.

    Returns ``(pairs, unmatched_energies, unmatched_refs)`` with pairs sorted by
    reference value.
    """
    E = np.asarray(energies, dtype=float)
    R = np.asarray(refs, dtype=float)
    if R.size == 0:
        raise ValueError("no reference energies given")
    if window is None:
        window = 0.5 * float(np.min(np.diff(np.sort(R)))) if R.size > 1 else np.inf
    cand = sorted((abs(e - r), i, j) for i, e in enumerate(E) for j, r in enumerate(R)
                  if abs(e - r) <= window)
    used_e, used_r, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_e or j in used_r:
            continue
        used_e.add(i)
        used_r.add(j)
        pairs.append((float(E[i]), float(R[j])))
    pairs.sort(key=lambda pr: pr[1])
    return (pairs,
            [float(E[i]) for i in range(E.size) if i not in used_e],
            [float(R[j]) for j in range(R.size) if j not in used_r])
