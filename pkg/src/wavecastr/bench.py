"""End-to-end experiments: oracle data, training, closed-loop test, spectra, metrics.

Timeline for a preset with ``n_train`` and ``n_test`` steps: the oracle has
frames ``0 .. n_train + n_test``.  Training targets are frames ``1 .. n_train``
(frame 0 is the initial feedback), the test loop is seeded with the
teacher-forced state at ``n_train`` and frame ``n_train``, and predictions are
scored against frames ``n_train + 1 .. n_train + n_test``.
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from . import esn, formats, spectral
from .errors import SpectralError, WavecastrError
from .qdyn import (PRESET_NAMES, Trajectory, TrajectorySpec, initial_wavepacket, preset_system,
                   propagate)

MODES = ("standard", "multistep")
PROFILES = ("full", "ci")

# per-system reservoir hyperparameters
RESERVOIR_PRESETS = {
    "ho1d": dict(spectral_radius=1.10, leak_rate=0.015, t_min=300, ridge=0.1, n_internal=2500, w_density=0.015),
    "morse": dict(spectral_radius=0.75, leak_rate=0.015, t_min=500, ridge=0.5, n_internal=1500, w_density=0.015),
    "quartic": dict(spectral_radius=0.75, leak_rate=0.017, t_min=50, ridge=0.05, n_internal=1500, w_density=0.008),
    "ho2d": dict(spectral_radius=1.10, leak_rate=0.06, t_min=300, ridge=0.5, n_internal=2000, w_density=0.015),
}

# benchmark wavefunction / energy MSEs per system and mode
BENCHMARK_MSE = {
    ("ho1d", "standard"): (6e-5, 3e-4), ("ho1d", "multistep"): (2e-5, 1e-5),
    ("morse", "standard"): (7e-4, 4e-5), ("morse", "multistep"): (1e-4, 2e-5),
    ("quartic", "standard"): (2e-4, 3e-5), ("quartic", "multistep"): (8e-5, 8e-6),
    ("ho2d", "standard"): (3e-4, 4e-3), ("ho2d", "multistep"): (2e-5, 8e-5),
}

AUDIT_SEEDS = (0, 1, 2, 3, 4)


@dataclass(frozen=True)
class SpectralOptions:
    peak_window: str = "hann"
    extraction_window: str = "hann"
    zero_pad_factor: int = 8
    rel_threshold: float = 0.05

    def __post_init__(self):
        for w in (self.peak_window, self.extraction_window):
            if w not in spectral.WINDOWS:
                raise ValueError(f"window must be one of {spectral.WINDOWS}, got {w!r}")
        if self.zero_pad_factor < 1 or not 0 < self.rel_threshold <= 1:
            raise ValueError("invalid zero_pad_factor or rel_threshold")


# Over a 5000-step test window the ho1d and Morse level spacings are below the
# hann main-lobe width; the rectangular window resolves them while hann still
# gives cleaner eigenfunctions.
SPECTRAL_PRESETS = {
    "ho1d": SpectralOptions("rectangular", "hann"),
    "morse": SpectralOptions("rectangular", "hann"),
    "quartic": SpectralOptions("hann", "hann"),
    "ho2d": SpectralOptions("hann", "hann"),
}


def _strict(cls, d: dict, what: str) -> dict:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {what} keys: {sorted(unknown)}")
    return d


@dataclass(frozen=True)
class ExperimentConfig:
    system: str
    reservoir: esn.ReservoirConfig
    mode: str = "multistep"
    n_train: int = 5000
    n_test: int = 5000
    dt: Optional[float] = None
    substeps: Optional[int] = None
    spectral: SpectralOptions = field(default_factory=SpectralOptions)
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.system not in PRESET_NAMES:
            raise ValueError(f"unknown system {self.system!r}; choose from {PRESET_NAMES}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("n_train must be >= 1 and n_test >= 0")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt override must be positive")
        if self.substeps is not None and self.substeps < 1:
            raise ValueError("substeps override must be >= 1")

    @property
    def seed(self) -> int:
        return self.reservoir.seed

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["reservoir"] = self.reservoir.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(_strict(cls, d, "experiment config"))
        if "system" not in d:
            raise ValueError("experiment config needs a 'system'")
        res = d.get("reservoir", {})
        if not isinstance(res, dict):
            raise ValueError("'reservoir' must be an object")
        base = default_config(d["system"], profile="full")
        merged = base.reservoir.to_dict() | res
        d["reservoir"] = esn.ReservoirConfig.from_dict(merged)
        sp = d.get("spectral", None)
        if sp is None:
            d["spectral"] = SPECTRAL_PRESETS[d["system"]]
        else:
            d["spectral"] = SpectralOptions(**_strict(SpectralOptions, sp, "spectral options"))
        return cls(**d)

    def with_mode(self, mode: str) -> "ExperimentConfig":
        return dataclasses.replace(self, mode=mode)


def default_config(system: str, mode: str = "multistep", seed: int = 0, profile: str = "full",
                   output_dir: str | None = None) -> ExperimentConfig:
    """Preset experiment; the ``ci`` profile shortens both windows to 1500 steps and uses N=500."""
    if system not in RESERVOIR_PRESETS:
        raise ValueError(f"unknown system {system!r}; choose from {PRESET_NAMES}")
    if profile not in PROFILES:
        raise ValueError(f"profile must be one of {PROFILES}")
    ps = preset_system(system)
    hp = dict(RESERVOIR_PRESETS[system])
    n = ps.trajectory.n_steps
    if profile == "ci":
        hp["n_internal"] = 500
        n = 1500
    rc = esn.ReservoirConfig(output_dim=ps.grid.size, seed=seed, **hp)
    return ExperimentConfig(system, rc, mode, n, n, spectral=SPECTRAL_PRESETS[system],
                            output_dir=output_dir)


# -- data --------------------------------------------------------------------

@lru_cache(maxsize=8)
def _oracle_frames(system: str, n_frames: int, dt: float | None, substeps: int | None):
    ps = preset_system(system)
    spec = TrajectorySpec(dt if dt is not None else ps.trajectory.dt, n_frames - 1,
                          substeps if substeps is not None else ps.trajectory.substeps)
    traj = propagate(initial_wavepacket(ps.packet, ps.grid), ps.potential, spec)
    traj.frames.setflags(write=False)
    return traj


def oracle_trajectory(system: str, n_train: int = 5000, n_test: int = 5000,
                      dt: float | None = None, substeps: int | None = None) -> Trajectory:
    """Exact trajectory of ``n_train + n_test + 1`` frames (cached, read-only)."""
    return _oracle_frames(system, n_train + n_test + 1, dt, substeps)


def split_oracle(traj: Trajectory, n_train: int):
    """``(train, test)``: frames ``0..n_train`` and ``n_train..end``."""
    if not 0 < n_train < len(traj):
        raise ValueError(f"n_train={n_train} outside the trajectory of {len(traj)} frames")
    return traj.slice(0, n_train + 1), traj.slice(n_train)


# -- metrics -----------------------------------------------------------------

def mse_wavefunctions(pred, ref):
    """Per-step mean over grid points of ``|pred - ref|^2`` and its mean."""
    p = np.asarray(getattr(pred, "frames", pred))
    r = np.asarray(getattr(ref, "frames", ref))
    if p.shape != r.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs reference {r.shape}")
    if p.ndim != 2:
        raise ValueError("expected (steps, points) arrays")
    series = np.mean(np.abs(p - r) ** 2, axis=1)
    return series, float(np.mean(series)) if series.size else float("nan")


@dataclass(frozen=True)
class EnergyMatch:
    pairs: list
    mse: float
    unmatched_peaks: list
    unmatched_refs: list


def mse_energies(peaks, refs, window: float | None = None) -> EnergyMatch:
    """Greedy nearest pairing of peaks with reference levels, then MSE over pairs."""
    if len(refs) == 0:
        raise ValueError("no reference energies")
    energies = [getattr(p, "energy", p) for p in peaks]
    pairs, up, ur = spectral.match_peaks(energies, refs, window)
    if not pairs:
        lo = f"{min(energies):.4g}..{max(energies):.4g}" if energies else "none"
        raise SpectralError(f"no peak matches any reference: {len(energies)} peaks in [{lo}], "
                            f"references in [{min(refs):.4g}, {max(refs):.4g}]")
    mse = float(np.mean([(a - b) ** 2 for a, b in pairs]))
    return EnergyMatch(pairs, mse, up, ur)


def late_window_mse(series: np.ndarray, fraction: float = 0.1) -> float:
    k = max(1, int(round(len(series) * fraction)))
    return float(np.mean(series[-k:]))


# -- reports -----------------------------------------------------------------

@dataclass
class MetricsReport:
    system: str
    mode: str
    seed: int
    mse_series: Optional[np.ndarray] = None
    mse_wavefunction_aggregate: Optional[float] = None
    mse_energies: Optional[float] = None
    matched_pairs: list = field(default_factory=list)
    unmatched_peaks: list = field(default_factory=list)
    unmatched_refs: list = field(default_factory=list)
    overlaps: list = field(default_factory=list)
    training: Optional[dict] = None
    failure_stage: Optional[str] = None
    error: Optional[str] = None
    series_file: Optional[str] = None
    timings: dict = field(default_factory=dict)
    predictions: Optional[Trajectory] = field(default=None, repr=False)
    spectrum: Optional[spectral.EnergySpectrum] = field(default=None, repr=False)
    peaks: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.failure_stage is None

    def to_dict(self) -> dict:
        """JSON payload; timings are kept out so reruns compare bitwise."""
        return {
            "system": self.system,
            "mode": self.mode,
            "seed": self.seed,
            "mse_wavefunction_aggregate": self.mse_wavefunction_aggregate,
            "mse_energies": self.mse_energies,
            "matched_pairs": [list(p) for p in self.matched_pairs],
            "unmatched_peaks": self.unmatched_peaks,
            "unmatched_refs": self.unmatched_refs,
            "overlaps": self.overlaps,
            "training": self.training,
            "failure_stage": self.failure_stage,
            "error": self.error,
            "series_file": self.series_file,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def series_csv(self, n_train: int, dt: float) -> str:
        s = self.mse_series if self.mse_series is not None else []
        return formats.csv_text(["step", "time", "mse"],
                                ((k, (n_train + k) * dt, float(v)) for k, v in enumerate(s, start=1)))


def analyse_prediction(report: MetricsReport, pred: Trajectory, system: str,
                       options: SpectralOptions) -> None:
    """Spectrum, peak matching and eigenfunction overlaps of a predicted trajectory."""
    levels = spectral.BENCHMARK_LEVELS[system]
    refs = [spectral.reference_energy(system, n) for n in levels]
    report.failure_stage = "spectrum"
    spec = spectral.energy_spectrum(spectral.autocorrelation(pred), options.peak_window,
                                    options.zero_pad_factor)
    report.spectrum = spec
    report.peaks = spectral.find_peaks(spec, options.rel_threshold)
    match = mse_energies(report.peaks, refs)
    report.mse_energies = match.mse
    report.matched_pairs = match.pairs
    report.unmatched_peaks = match.unmatched_peaks
    report.unmatched_refs = match.unmatched_refs

    report.failure_stage = "extract"
    level_of = dict(zip(refs, levels))
    for e_pred, e_ref in match.pairs:
        level = level_of[e_ref]
        ref_state = spectral.reference_eigenfunction(system, level, pred.grid)
        est = spectral.extract_eigenfunction(pred, e_pred, options.extraction_window, ref_state)
        report.overlaps.append({"level": list(level) if isinstance(level, tuple) else level,
                                "energy": e_pred, "overlap": est.overlap_with_reference})
    report.failure_stage = None


def run_experiment(cfg: ExperimentConfig, matrices: esn.ReservoirMatrices | None = None,
                   data: Trajectory | None = None, write: bool = True) -> MetricsReport:
    """Oracle, training, closed-loop test and analysis for one mode.

    Domain failures do not raise: the report records the failing stage and
    keeps whatever was computed before it.
    """
    rep = MetricsReport(cfg.system, cfg.mode, cfg.seed)
    rc = cfg.reservoir
    clock = time.perf_counter
    try:
        rep.failure_stage = "oracle"
        t0 = clock()
        if data is None:
            data = oracle_trajectory(cfg.system, cfg.n_train, cfg.n_test, cfg.dt, cfg.substeps)
        rep.timings["oracle"] = clock() - t0
        train, test = split_oracle(data, cfg.n_train)

        rep.failure_stage = "init"
        t0 = clock()
        m = matrices if matrices is not None else esn.init_matrices(rc)
        rep.timings["init"] = clock() - t0

        rep.failure_stage = "train"
        t0 = clock()
        trainer = esn.train_multistep if cfg.mode == "multistep" else esn.train_standard
        readout, record = trainer(m, rc, train.frames[1:], y0=train.frames[0])
        rep.training = record.to_dict()
        rep.timings["train"] = clock() - t0

        rep.failure_stage = "predict"
        t0 = clock()
        preds, _ = esn.free_run(m, rc, readout, record.final_state, train.frames[-1], cfg.n_test)
        rep.timings["predict"] = clock() - t0
        rep.predictions = Trajectory(data.grid, data.dt, preds)
        rep.mse_series, rep.mse_wavefunction_aggregate = mse_wavefunctions(preds, test.frames[1:])

        t0 = clock()
        analyse_prediction(rep, rep.predictions, cfg.system, cfg.spectral)
        rep.timings["analysis"] = clock() - t0
    except (WavecastrError, ValueError) as exc:
        rep.error = f"{type(exc).__name__}: {exc}"
        partial = getattr(exc, "partial", None)
        if partial is not None and rep.failure_stage == "predict" and len(partial):
            rep.mse_series, rep.mse_wavefunction_aggregate = mse_wavefunctions(
                partial, test.frames[1:1 + len(partial)])
    if write and cfg.output_dir:
        write_report(rep, cfg, Path(cfg.output_dir))
    return rep


def write_report(rep: MetricsReport, cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{rep.system}_{rep.mode}"
    dt = cfg.dt if cfg.dt is not None else preset_system(cfg.system).trajectory.dt
    rep.series_file = f"{stem}_mse.csv"
    formats.atomic_write_text(out / rep.series_file, rep.series_csv(cfg.n_train, dt))
    if rep.spectrum is not None:
        formats.atomic_write_text(out / f"{stem}_spectrum.csv", rep.spectrum.to_csv())
        formats.atomic_write_text(out / f"{stem}_peaks.csv", spectral.peaks_csv(rep.peaks))
    formats.atomic_write_text(out / f"{stem}_report.json", rep.to_json())
    formats.atomic_write_text(out / f"{stem}_timings.json",
                              json.dumps(rep.timings, indent=2, sort_keys=True) + "\n")


@dataclass
class Comparison:
    standard: MetricsReport
    multistep: MetricsReport

    def to_dict(self) -> dict:
        s, m = self.standard, self.multistep
        ordered = None
        if s.mse_wavefunction_aggregate is not None and m.mse_wavefunction_aggregate is not None:
            ordered = m.mse_wavefunction_aggregate < s.mse_wavefunction_aggregate
        return {"system": s.system, "seed": s.seed, "standard": s.to_dict(),
                "multistep": m.to_dict(), "multistep_better_wavefunction": ordered}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def compare_modes(cfg: ExperimentConfig, write: bool = True) -> Comparison:
    """Both training modes on identical reservoir matrices and oracle data."""
    data = oracle_trajectory(cfg.system, cfg.n_train, cfg.n_test, cfg.dt, cfg.substeps)
    m = esn.init_matrices(cfg.reservoir)
    reports = {mode: run_experiment(cfg.with_mode(mode), m, data, write) for mode in MODES}
    cmp = Comparison(reports["standard"], reports["multistep"])
    if write and cfg.output_dir:
        formats.atomic_write_text(Path(cfg.output_dir) / f"{cfg.system}_compare.json", cmp.to_json())
    return cmp
