"""Grids, potentials, initial wavepackets and the split-operator propagator.

Units throughout are hbar = m = 1.  Grids are periodic and endpoint-exclusive
so that the FFT-based kinetic operator is exact on the sampled functions.
2D arrays are indexed ``[ix, iy]`` and flatten row-major (x outer).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from .errors import WavecastrError

__all__ = [
    "SpatialGrid", "Wavefunction", "Trajectory",
    "Harmonic1D", "Morse", "Quartic", "Harmonic2D", "PotentialSpec",
    "WavepacketSpec", "TrajectorySpec", "PresetSystem",
    "build_grid", "evaluate_potential", "initial_wavepacket", "mean_energy",
    "propagate", "preset_system", "PRESET_NAMES",
]

MIN_POINTS = 8
NORM_TOL = 1e-6


class LeakageError(WavecastrError):
    """Initial packet has too much amplitude at a grid edge."""


@dataclass(frozen=True)
class Axis:
    x_min: float
    x_max: float
    n_points: int

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def points(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def momenta(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid in one or two dimensions."""

    axes: tuple[Axis, ...]

    def __post_init__(self):
        if len(self.axes) not in (1, 2):
            raise ValueError(f"grid must be 1D or 2D, got {len(self.axes)} axes")
        for ax in self.axes:
            if not ax.x_max > ax.x_min:
                raise ValueError(f"x_max ({ax.x_max}) must exceed x_min ({ax.x_min})")
            if ax.n_points < MIN_POINTS:
                raise ValueError(f"n_points must be >= {MIN_POINTS}, got {ax.n_points}")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.n_points for ax in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(ax.dx for ax in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(ax.points for ax in self.axes), indexing="ij"))

    def k_squared(self) -> np.ndarray:
        ks = np.meshgrid(*(ax.momenta for ax in self.axes), indexing="ij")
        return sum(k**2 for k in ks)


def build_grid(spec: Sequence[tuple[float, float, int]]) -> SpatialGrid:
    """Build a grid from ``[(x_min, x_max, n_points), ...]``, one tuple per dimension."""
    axes = tuple(Axis(float(a), float(b), int(n)) for a, b, n in spec)
    return SpatialGrid(axes)


@dataclass
class Wavefunction:
    """Complex amplitudes on a grid at a single instant."""

    grid: SpatialGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=np.complex128)
        if amp.size != self.grid.size:
            raise ValueError(
                f"amplitude count {amp.size} does not match grid size {self.grid.size}")
        self.amplitudes = amp.reshape(self.grid.shape)

    @property
    def vector(self) -> np.ndarray:
        return self.amplitudes.ravel()

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.cell_volume)


@dataclass
class Trajectory:
    """Time-ordered frames on a common grid, stored as an ``(n_frames, size)`` array."""

    grid: SpatialGrid
    dt: float
    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.complex128)
        if frames.ndim != 2:
            frames = frames.reshape(frames.shape[0], -1)
        if frames.shape[1] != self.grid.size:
            raise ValueError(
                f"frame size {frames.shape[1]} does not match grid size {self.grid.size}")
        self.frames = frames

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __getitem__(self, i: int) -> Wavefunction:
        return Wavefunction(self.grid, self.frames[i])

    def __iter__(self) -> Iterator[Wavefunction]:
        for i in range(len(self)):
            yield self[i]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self))

    def slice(self, start: int, stop: int | None = None) -> "Trajectory":
        return Trajectory(self.grid, self.dt, self.frames[start:stop])


# -- potentials --------------------------------------------------------------

@dataclass(frozen=True)
class Harmonic1D:
    omega: float = 1.0
    x0: float = 0.0
    ndim = 1

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be positive")

    def __call__(self, x):
        return 0.5 * self.omega**2 * (x - self.x0) ** 2


@dataclass(frozen=True)
class Morse:
    De: float = 7.0
    a: float = 0.09
    x0: float = 0.0
    ndim = 1

    def __post_init__(self):
        if self.De <= 0 or self.a <= 0:
            raise ValueError("Morse De and a must be positive")

    def __call__(self, x):
        e = np.exp(-self.a * (x - self.x0))
        return self.De * (e * e - 2.0 * e)

    @property
    def lam(self) -> float:
        return np.sqrt(2.0 * self.De) / self.a

    @property
    def n_bound(self) -> int:
        """Number of bound states, i.e. count of n >= 0 with n < lam - 1/2."""
        return int(np.ceil(self.lam - 0.5))


@dataclass(frozen=True)
class Quartic:
    coefficients: tuple[float, float, float, float, float] = (-0.5, 0.14, 0.09, -0.01, 0.001)
    ndim = 1

    def __post_init__(self):
        if len(self.coefficients) != 5:
            raise ValueError("quartic potential needs exactly five coefficients")

    def __call__(self, x):
        # numpy polyval wants highest degree first
        return np.polyval(self.coefficients[::-1], x)


@dataclass(frozen=True)
class Harmonic2D:
    omega_x_sq: float = 1.0
    omega_y_sq: float = float(np.sqrt(2.0))
    x0: float = 0.0
    y0: float = 0.0
    ndim = 2

    def __post_init__(self):
        if self.omega_x_sq <= 0 or self.omega_y_sq <= 0:
            raise ValueError("squared frequencies must be positive")

    def __call__(self, x, y):
        return 0.5 * self.omega_x_sq * (x - self.x0) ** 2 + 0.5 * self.omega_y_sq * (y - self.y0) ** 2


PotentialSpec = Union[Harmonic1D, Morse, Quartic, Harmonic2D]


class FreeParticle:
    """Zero potential in any dimension; handy for analytic checks."""

    def __init__(self, ndim: int = 1):
        self.ndim = ndim

    def __call__(self, *coords):
        return np.zeros_like(coords[0])


def evaluate_potential(p, g: SpatialGrid) -> np.ndarray:
    """Potential sampled at every grid point, shaped like the grid."""
    if p.ndim != g.ndim:
        raise ValueError(f"potential is {p.ndim}D but grid is {g.ndim}D")
    return np.asarray(p(*g.mesh()), dtype=np.float64)


# -- wavepackets -------------------------------------------------------------

@dataclass(frozen=True)
class WavepacketSpec:
    """Gaussian packet parameters.

    ``standard_1d`` is ``exp(-(x-x0)^2 / (2 w^2)) exp(i p0 x)``; presets use w = 1.
    ``paper_2d`` is ``exp(-(x-x0)^2/(4 wx^2) - (y-y0)^2/(4 wy^2)) exp(i p0 (x - y))``,
    so ``wx``, ``wy`` are the position standard deviations.
    """

    center: tuple[float, ...] = (0.0,)
    p0: float = 0.0
    width: tuple[float, ...] = (1.0,)
    convention: str = "standard_1d"
    edge_tolerance: float = 1e-8

    def __post_init__(self):
        if self.convention not in ("standard_1d", "paper_2d"):
            raise ValueError(f"unknown packet convention {self.convention!r}")
        if any(w <= 0 for w in self.width):
            raise ValueError("packet widths must be positive")
        ndim = 1 if self.convention == "standard_1d" else 2
        if len(self.center) != ndim or len(self.width) != ndim:
            raise ValueError(f"{self.convention} packet needs {ndim} centers and widths")


def _check_edges(amp: np.ndarray, g: SpatialGrid, tol: float) -> None:
    peak = np.abs(amp).max()
    for d, ax in enumerate(g.axes):
        name = "xy"[d] if g.ndim == 2 else "x"
        lo = np.abs(np.take(amp, 0, axis=d)).max()
        hi = np.abs(np.take(amp, -1, axis=d)).max()
        for label, val in ((f"{name}_min", lo), (f"{name}_max", hi)):
            if val >= tol * peak:
                raise LeakageError(
                    f"packet amplitude at the {label} edge ({ax.x_min if label.endswith('min') else ax.x_max:g}) "
                    f"is {val / peak:.2e} of peak, above tolerance {tol:.1e}; enlarge the grid")


def initial_wavepacket(spec: WavepacketSpec, g: SpatialGrid) -> Wavefunction:
    """Sample and renormalize a Gaussian packet on ``g``."""
    if spec.convention == "standard_1d":
        if g.ndim != 1:
            raise ValueError("standard_1d packet requires a 1D grid")
        (x,) = g.mesh()
        (x0,), (w,) = spec.center, spec.width
        amp = np.exp(-((x - x0) ** 2) / (2.0 * w**2)) * np.exp(1j * spec.p0 * x)
    else:
        if g.ndim != 2:
            raise ValueError("paper_2d packet requires a 2D grid")
        x, y = g.mesh()
        (x0, y0), (wx, wy) = spec.center, spec.width
        amp = (np.exp(-((x - x0) ** 2) / (4.0 * wx**2) - (y - y0) ** 2 / (4.0 * wy**2))
               * np.exp(1j * spec.p0 * (x - y)))
    _check_edges(amp, g, spec.edge_tolerance)
    amp = amp / np.sqrt(np.sum(np.abs(amp) ** 2) * g.cell_volume)
    return Wavefunction(g, amp)


def _kinetic(amp: np.ndarray, k2: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(0.5 * k2 * np.fft.fftn(amp))


def mean_energy(psi: Wavefunction, p) -> float:
    """<psi|H|psi> with the kinetic term applied in momentum space."""
    norm = psi.norm()
    if abs(norm - 1.0) > NORM_TOL:
        raise ValueError(f"wavefunction is not normalized (norm = {norm:.8f})")
    g = psi.grid
    amp = psi.amplitudes
    h_psi = _kinetic(amp, g.k_squared()) + evaluate_potential(p, g) * amp
    return float(np.real(np.vdot(amp, h_psi)) * g.cell_volume)


# -- propagation -------------------------------------------------------------

@dataclass(frozen=True)
class TrajectorySpec:
    """Time stepping: ``n_steps`` recorded steps of size ``dt``.

    Each recorded step is made of ``substeps`` Strang steps of size dt/substeps.
    """

    dt: float
    n_steps: int
    substeps: int = 1
    hbar: float = field(default=1.0, init=False)
    mass: float = field(default=1.0, init=False)

    def __post_init__(self):
        if self.dt == 0:
            raise ValueError("dt must be nonzero")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


def propagate(psi0: Wavefunction, p, t: TrajectorySpec) -> Trajectory:
    """Integrate the TDSE with Strang splitting (half kinetic, potential, half kinetic).

    Returns all ``t.n_steps + 1`` frames including ``psi0``.  A negative ``dt``
    runs the propagator backwards.
    """
    norm = psi0.norm()
    if abs(norm - 1.0) > NORM_TOL:
        raise ValueError(f"initial wavefunction is not normalized (norm = {norm:.8f})")
    g = psi0.grid
    h = t.dt / t.substeps
    half_kin = np.exp(-0.25j * g.k_squared() * h)
    pot = np.exp(-1j * evaluate_potential(p, g) * h)
    fft, ifft = np.fft.fftn, np.fft.ifftn

    frames = np.empty((t.n_steps + 1, g.size), dtype=np.complex128)
    amp = psi0.amplitudes.copy()
    frames[0] = amp.ravel()
    for i in range(1, t.n_steps + 1):
        for _ in range(t.substeps):
            amp = ifft(half_kin * fft(pot * ifft(half_kin * fft(amp))))
        frames[i] = amp.ravel()
    return Trajectory(g, t.dt, frames)


# -- presets -----------------------------------------------------------------

@dataclass(frozen=True)
class PresetSystem:
    name: str
    grid: SpatialGrid
    potential: PotentialSpec
    packet: WavepacketSpec
    trajectory: TrajectorySpec

    def __iter__(self):
        # allows ``grid, pot, packet, traj = preset_system(...)``
        return iter((self.grid, self.potential, self.packet, self.trajectory))

    def describe(self) -> dict:
        return {
            "system": self.name,
            "grid": [dataclasses.asdict(ax) for ax in self.grid.axes],
            "potential": {"type": type(self.potential).__name__, **dataclasses.asdict(self.potential)},
            "packet": dataclasses.asdict(self.packet),
            "trajectory": {"dt": self.trajectory.dt, "n_steps": self.trajectory.n_steps,
                           "substeps": self.trajectory.substeps},
        }


PRESET_NAMES = ("ho1d", "morse", "quartic", "ho2d")


def preset_system(name: str) -> PresetSystem:
    """Grid, potential, packet and stepping for one of the four benchmark systems.

    ``n_steps`` is the length of one segment; training and test each use one
    segment, so a full oracle run is ``2 * n_steps`` steps.
    """
    if name == "ho1d":
        return PresetSystem(
            name, build_grid([(-10.0, 10.0, 200)]), Harmonic1D(1.0, 0.0),
            WavepacketSpec((0.0,), 3.35, (1.0,)), TrajectorySpec(0.002, 5000, substeps=3))
    if name == "morse":
        return PresetSystem(
            name, build_grid([(-10.0, 25.0, 140)]), Morse(7.0, 0.09, 0.0),
            WavepacketSpec((0.0,), 2.0, (1.0,)), TrajectorySpec(0.007, 5000, substeps=3))
    if name == "quartic":
        return PresetSystem(
            name, build_grid([(-15.0, 25.0, 150)]), Quartic((-0.5, 0.14, 0.09, -0.01, 0.001)),
            WavepacketSpec((0.0,), 2.0, (1.0,)), TrajectorySpec(0.007, 5000, substeps=3))
    if name == "ho2d":
        # the [-5,5] box cannot hold this packet to 1e-8 at the edges; 1e-3 is the
        # tightest bound the preset grid admits
        return PresetSystem(
            name, build_grid([(-5.0, 5.0, 50), (-5.0, 5.0, 50)]),
            Harmonic2D(1.0, float(np.sqrt(2.0)), 0.0, 0.0),
            WavepacketSpec((0.0, 0.0), 1.75, (0.9, 0.9), "paper_2d", edge_tolerance=1e-3),
            TrajectorySpec(0.02, 5000, substeps=10))
    raise ValueError(f"unknown system {name!r}; choose from {', '.join(PRESET_NAMES)}")
