"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a one-line verdict; the lines are printed in the terminal
summary (and directly when run as ``python tests/test_acceptance.py``).
Criterion 6 runs the full reservoir presets on five seeds and takes about 25 minutes.
"""
from __future__ import annotations

import dataclasses
import subprocess
import sys
import tempfile
import time
from functools import lru_cache
from pathlib import Path

import numpy as np

from wavecastr import bench, esn, qdyn as Q
from wavecastr import spectral as S

from oracles import crank_nicolson, ridge_gradient_descent, ridge_objective, spectral_hamiltonian

RESULTS: dict[int, str] = {}
SYSTEMS = ("ho1d", "morse", "quartic", "ho2d")


def record(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS[k] = line
    print(line, flush=True)
    assert ok, line


# -- 1. unitarity and energy conservation -------------------------------------

def test_criterion_1_unitarity_energy():
    parts, ok = [], True
    for name in SYSTEMS:
        ps = Q.preset_system(name)
        t0 = time.perf_counter()
        psi0 = Q.initial_wavepacket(ps.packet, ps.grid)
        tr = Q.propagate(psi0, ps.potential, Q.TrajectorySpec(ps.trajectory.dt, 5000, ps.trajectory.substeps))
        elapsed = time.perf_counter() - t0
        norms = np.sum(np.abs(tr.frames) ** 2, axis=1) * ps.grid.cell_volume
        e0 = Q.mean_energy(psi0, ps.potential)
        idx = np.r_[0:len(tr):10, len(tr) - 1]
        e = np.array([Q.mean_energy(Q.Wavefunction(ps.grid, tr.frames[i]), ps.potential) for i in idx])
        dn = float(np.max(np.abs(norms - 1)))
        de = float(np.max(np.abs(e - e0)) / abs(e0))
        ok &= dn <= 1e-10 and de <= 1e-6
        parts.append(f"{name} norm {dn:.1e} energy {de:.1e} ({elapsed:.1f} s)")
    record(1, ok, "; ".join(parts))


# -- 2. Crank-Nicolson cross-check --------------------------------------------

def test_criterion_2_crank_nicolson():
    g = Q.build_grid([(-8, 8, 64)])
    pot = Q.Harmonic1D(1.0, 0.0)
    psi = Q.initial_wavepacket(Q.WavepacketSpec((1.0,), 1.0, (1.0,)), g)
    tr = Q.propagate(psi, pot, Q.TrajectorySpec(0.01, 100))
    cn = crank_nicolson(psi.amplitudes, spectral_hamiltonian(g, pot), 0.0005, 2000)[::20]
    dev = float(np.max(np.abs(tr.frames - cn)))
    record(2, dev <= 1e-4, f"max pointwise deviation {dev:.2e} (bar 1e-4)")


# -- 3. eigenenergies from oracle trajectories --------------------------------

def _oracle_peaks(traj):
    spec = S.energy_spectrum(S.autocorrelation(traj), "hann", 8)
    return [p.energy for p in S.find_peaks(spec, 0.05)]


def _all_within(peaks, refs, tol):
    pairs, _, missing = S.match_peaks(peaks, list(refs))
    worst = max((abs(a - b) for a, b in pairs), default=np.inf)
    return not missing and worst <= tol, worst


def test_criterion_3_oracle_eigenenergies():
    bars = {"ho1d": 0.05, "morse": 0.02, "quartic": 0.02, "ho2d": 0.05}
    parts, ok = [], True
    for name in SYSTEMS:
        peaks = _oracle_peaks(bench.oracle_trajectory(name))
        good, worst = _all_within(peaks, S.BENCHMARK_ENERGIES[name], bars[name])
        ok &= good
        parts.append(f"{name} {len(S.BENCHMARK_ENERGIES[name])} levels, worst {worst:.1e} (bar {bars[name]})")
    # the analytic bar needs twice the horizon for resolution
    long_morse = bench.oracle_trajectory("morse", 10000, 10000)
    analytic = [S.reference_energy("morse", n) for n in S.BENCHMARK_LEVELS["morse"]]
    good, worst = _all_within(_oracle_peaks(long_morse), analytic, 5e-4)
    ok &= good
    parts.append(f"morse analytic worst {worst:.1e} (bar 5e-4, 20000 steps)")
    record(3, ok, "; ".join(parts))


# -- 4. complex ridge ---------------------------------------------------------

def test_criterion_4_ridge():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        T, N, L = int(rng.integers(20, 201)), int(rng.integers(2, 51)), int(rng.integers(1, 5))
        gamma = float(10 ** rng.uniform(-1, 1))
        X = rng.normal(size=(T, N)) + 1j * rng.normal(size=(T, N))
        Y = rng.normal(size=(T, L)) + 1j * rng.normal(size=(T, L))
        W = esn.fit_ridge_complex(X, Y, gamma).W_out
        W_gd = ridge_gradient_descent(X, Y, gamma)
        scale = T * L
        worst = max(worst, abs(ridge_objective(X, Y, W, gamma) - ridge_objective(X, Y, W_gd, gamma)) / scale)
    Xr, Yr = rng.normal(size=(150, 30)), rng.normal(size=(150, 3))
    Wr = esn.fit_ridge_complex(Xr, Yr, 0.3).W_out
    real = np.linalg.solve(Xr.T @ Xr + 0.3 * np.eye(30), Xr.T @ Yr).T
    real_dev = float(np.max(np.abs(Wr - real)))
    record(4, worst <= 1e-9 and real_dev <= 1e-10,
           f"20 instances, max regularized-MSE gap {worst:.1e} (bar 1e-9); real-data deviation {real_dev:.1e} (bar 1e-10)")


# -- 5. echo-state property ---------------------------------------------------

def test_criterion_5_echo_state():
    parts, ok = [], True
    for name in SYSTEMS:
        cfg = bench.default_config(name)
        rc = cfg.reservoir
        m = esn.init_matrices(rc)
        train, _ = bench.split_oracle(bench.oracle_trajectory(name, cfg.n_train, cfg.n_test), cfg.n_train)
        teacher = train.frames[1:rc.t_min + 1]
        rc0 = dataclasses.replace(rc, t_min=0)
        rng = np.random.default_rng(1)
        x_alt = rng.uniform(-1, 1, rc.n_internal) + 1j * rng.uniform(-1, 1, rc.n_internal)
        a = esn.collect_states(m, rc0, teacher, y0=train.frames[0])[-1]
        b = esn.collect_states(m, rc0, teacher, y0=train.frames[0], x0=x_alt)[-1]
        div = float(np.max(np.abs(a - b)))
        ok &= div < 1e-6
        parts.append(f"{name} {div:.1e} after {rc.t_min} steps")
    record(5, ok, "state divergence (bar 1e-6): " + "; ".join(parts))


# -- 6/7. full-profile benchmark ----------------------------------------------

@lru_cache(maxsize=None)
def _compare(system: str, seed: int) -> dict:
    cmp_ = bench.compare_modes(bench.default_config(system, seed=seed), write=False)
    s, m = cmp_.standard, cmp_.multistep
    return {"standard": s.mse_wavefunction_aggregate, "multistep": m.mse_wavefunction_aggregate,
            "overlaps": [(o["level"], o["overlap"]) for o in m.overlaps],
            "failed": s.failure_stage or m.failure_stage}


def test_criterion_6_benchmark():
    parts, ok = [], True
    for name in SYSTEMS:
        runs = [_compare(name, seed) for seed in bench.AUDIT_SEEDS]
        ms = np.array([r["multistep"] if r["multistep"] is not None else np.inf for r in runs])
        st = np.array([r["standard"] if r["standard"] is not None else np.inf for r in runs])
        bar = 50 * bench.BENCHMARK_MSE[(name, "multistep")][0]
        med = float(np.median(ms))
        good = med <= bar
        wins = int(np.sum(ms < st))
        detail = f"{name} median {med:.1e} (bar {bar:.0e}), multistep better {wins}/5"
        if name in ("ho1d", "ho2d"):
            good &= wins >= 4
        ok &= good
        parts.append(detail)
    record(6, ok, "; ".join(parts))


def test_criterion_7_eigenfunctions():
    seed = bench.AUDIT_SEEDS[0]
    ho1d = dict((lvl, ov) for lvl, ov in _compare("ho1d", seed)["overlaps"])
    ho2d = dict((tuple(lvl), ov) for lvl, ov in _compare("ho2d", seed)["overlaps"])
    need1 = list(S.BENCHMARK_LEVELS["ho1d"])
    need2 = list(S.BENCHMARK_LEVELS["ho2d"])
    o1 = [ho1d.get(n, 0.0) for n in need1]
    o2 = [ho2d.get(tuple(n), 0.0) for n in need2]
    ok = min(o1) >= 0.98 and min(o2) >= 0.95
    record(7, ok, f"ho1d n=2..9 min overlap {min(o1):.4f} (bar 0.98); "
                  f"ho2d min overlap {min(o2):.4f} (bar 0.95); seed {seed}")


# -- 8. multi-step fixed point ------------------------------------------------

def test_criterion_8_fixed_point():
    worst = 0.0
    for seed in range(4):
        cfg = esn.ReservoirConfig(n_internal=20, output_dim=4, w_density=1.0, spectral_radius=0.9,
                                  leak_rate=1.0, ridge=0.0, t_min=20, seed=seed)
        m = esn.init_matrices(cfg)
        rng = np.random.default_rng(100 + seed)
        W0 = 3 * (rng.standard_normal((4, 20)) + 1j * rng.standard_normal((4, 20))) / np.sqrt(20)
        y0 = 0.5 * (rng.standard_normal(4) + 1j * rng.standard_normal(4))
        teacher, _ = esn.free_run(m, cfg, esn.Readout(W0), esn.ReservoirState(np.zeros(20, complex)), y0, 400)
        readout, rec = esn.train_multistep(m, cfg, teacher, y0=y0)
        worst = max(worst, float(np.max(np.abs(readout.W_out - rec.provisional_readout.W_out))))
    record(8, worst <= 1e-8, f"max |W_out - provisional| {worst:.1e} over 4 seeds (bar 1e-8)")


# -- 9. determinism -----------------------------------------------------------

def _pipeline(out: Path) -> float:
    cli = [sys.executable, "-m", "wavecastr.cli"]
    common = ["--system", "morse", "--seed", "7", "--profile", "ci"]
    steps = [
        ["generate", *common, "--out", str(out / "data")],
        ["train", *common, "--train", str(out / "data" / "train.wftraj"), "--out", str(out / "model.esnmod")],
        ["predict", "--model", str(out / "model.esnmod"), "--seed-traj", str(out / "data" / "train.wftraj"),
         "--n-steps", "1500", "--out", str(out / "pred.wftraj")],
        ["compare", *common, "--out", str(out / "compare")],
    ]
    t0 = time.perf_counter()
    for argv in steps:
        r = subprocess.run(cli + argv, capture_output=True, text=True)
        if argv[0] != "compare" and r.returncode != 0:
            raise AssertionError(f"{argv[0]} failed: {r.stderr}")
    return time.perf_counter() - t0


def test_criterion_9_determinism():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        times = [_pipeline(tmp / f"run{k}") for k in range(2)]
        files = [{p.relative_to(tmp / f"run{k}"): p.read_bytes()
                  for p in sorted((tmp / f"run{k}").rglob("*")) if p.is_file() and "timings" not in p.name}
                 for k in range(2)]
    same = files[0] == files[1] and len(files[0]) > 0
    fast = max(times) < 300
    record(9, same and fast, f"{len(files[0])} files bitwise identical: {same}; "
                             f"runtimes {times[0]:.1f} s, {times[1]:.1f} s (bar 300 s)")


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    for fn in tests:
        try:
            fn()
        except AssertionError:
            pass
    print("\n".join(RESULTS[k] for k in sorted(RESULTS)))
