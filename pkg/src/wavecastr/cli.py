"""Command-line interface.

Exit codes: 0 success, 1 domain failure, 2 usage error, 3 I/O or file-format error.
The reservoir seed comes from ``WAVECASTR_SEED`` unless ``--seed`` is given.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import bench, esn, formats, spectral
from .errors import FormatError, WavecastrError
from .qdyn import PRESET_NAMES, Trajectory, preset_system

EXIT_DOMAIN, EXIT_USAGE, EXIT_IO = 1, 2, 3


class UsageError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("WAVECASTR_SEED")
    if env is None:
        return 0
    try:
        seed = int(env)
    except ValueError:
        raise UsageError(f"WAVECASTR_SEED must be an integer, got {env!r}") from None
    if not 0 <= seed < 2**64:
        raise UsageError("WAVECASTR_SEED out of range")
    return seed


def _load_config(args, system: str | None, mode: str | None = None) -> bench.ExperimentConfig:
    """Experiment config from ``--config`` (strict JSON) and flag overrides."""
    raw = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.config}: not valid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise UsageError(f"{args.config}: top level must be an object")
    if system is not None:
        if raw.get("system", system) != system:
            raise UsageError(f"--system {system} conflicts with config system {raw['system']!r}")
        raw["system"] = system
    if "system" not in raw:
        raise UsageError("a system is required (--system or 'system' in --config)")
    if mode is not None:
        raw["mode"] = mode
    profile = getattr(args, "profile", "full")
    try:
        if profile == "ci":
            base = bench.default_config(raw["system"], profile="ci")
            raw.setdefault("n_train", base.n_train)
            raw.setdefault("n_test", base.n_test)
            raw["reservoir"] = {"n_internal": base.reservoir.n_internal} | raw.get("reservoir", {})
        raw["reservoir"] = dict(raw.get("reservoir", {})) | {"seed": _seed(args)}
        return bench.ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _write_json(path: Path, payload) -> None:
    formats.atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load_config(args, args.system)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = bench.oracle_trajectory(cfg.system, cfg.n_train, cfg.n_test, cfg.dt, cfg.substeps)
    train, test = bench.split_oracle(data, cfg.n_train)
    formats.write_trajectory(out / "train.wftraj", train)
    formats.write_trajectory(out / "test.wftraj", test)
    desc = preset_system(cfg.system).describe()
    _write_json(out / "generate.json", {
        "system": cfg.system,
        "preset": desc,
        "dt": data.dt,
        "n_train": cfg.n_train,
        "n_test": cfg.n_test,
        "seed": cfg.seed,
        "files": {name: formats.sha256_file(out / name) for name in ("train.wftraj", "test.wftraj")},
    })
    print(f"wrote {out / 'train.wftraj'} ({len(train)} frames) and {out / 'test.wftraj'} ({len(test)} frames)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args, args.system, args.mode)
    traj = formats.read_trajectory(args.train)
    rc = cfg.reservoir
    if rc.output_dim != traj.grid.size:
        rc = esn.ReservoirConfig.from_dict(rc.to_dict() | {"output_dim": traj.grid.size})
    try:
        stage = "init"
        m = esn.init_matrices(rc)
        stage = "train"
        trainer = esn.train_multistep if cfg.mode == "multistep" else esn.train_standard
        readout, record = trainer(m, rc, traj.frames[1:], y0=traj.frames[0])
    except WavecastrError as exc:
        raise WavecastrError(f"{stage} stage: {exc}") from exc
    out = Path(args.out)
    esn.save_model(out, esn.ReservoirModel(rc, m, readout))
    _write_json(out.with_name(out.name + ".record.json"),
                {"system": cfg.system, "config": rc.to_dict(), "record": record.to_dict()})
    print(f"wrote {out} (N={rc.n_internal}, L={rc.output_dim}, mode={cfg.mode})")
    return 0


def cmd_predict(args) -> int:
    if args.n_steps < 0:
        raise UsageError("--n-steps must be non-negative")
    model = esn.load_model(args.model)
    seed_traj = formats.read_trajectory(args.seed_traj)
    L = model.config.output_dim
    if seed_traj.grid.size != L:
        raise WavecastrError(f"model output size L={L} does not match trajectory frame size "
                             f"{seed_traj.grid.size}")
    x_T = model.warm_up(seed_traj.frames)
    preds, _ = model.free_run(x_T, seed_traj.frames[-1], args.n_steps)
    formats.write_trajectory(args.out, Trajectory(seed_traj.grid, seed_traj.dt, preds))
    print(f"wrote {args.out} ({args.n_steps} frames)")
    return 0


def _spectral_options(args) -> bench.SpectralOptions:
    base = bench.SPECTRAL_PRESETS.get(args.system, bench.SpectralOptions())
    try:
        return bench.SpectralOptions(
            args.window or base.peak_window,
            getattr(args, "extraction_window", None) or args.window or base.extraction_window,
            args.pad if args.pad is not None else base.zero_pad_factor,
            args.threshold if args.threshold is not None else base.rel_threshold)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_spectrum(args) -> int:
    opts = _spectral_options(args)
    traj = formats.read_trajectory(args.inp)
    spec = spectral.energy_spectrum(spectral.autocorrelation(traj), opts.peak_window, opts.zero_pad_factor)
    peaks = spectral.find_peaks(spec, opts.rel_threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    formats.atomic_write_text(out / "spectrum.csv", spec.to_csv())
    formats.atomic_write_text(out / "peaks.csv", spectral.peaks_csv(peaks))
    print(f"{len(peaks)} peaks: " + ", ".join(f"{p.energy:.4f}" for p in peaks))
    return 0


def cmd_eigenfunctions(args) -> int:
    opts = _spectral_options(args)
    traj = formats.read_trajectory(args.inp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, energy in enumerate(args.energy):
        est = spectral.extract_eigenfunction(traj, energy, opts.extraction_window)
        path = out / f"eigenfunction_{i}.wftraj"
        frame = Trajectory(traj.grid, traj.dt, est.wavefunction.vector[None, :])
        formats.write_trajectory(path, frame)
        print(f"E={energy:g} -> {path}")
    return 0


def cmd_report(args) -> int:
    opts = _spectral_options(args)
    pred = formats.read_trajectory(args.pred)
    ref = formats.read_trajectory(args.ref)
    if ref.grid != pred.grid:
        raise WavecastrError("prediction and reference trajectories use different grids")
    # accept a reference that still carries the seed frame in front
    if len(ref) == len(pred) + 1:
        ref = ref.slice(1)
    rep = bench.MetricsReport(args.system, args.mode or "unknown", _seed(args))
    rep.mse_series, rep.mse_wavefunction_aggregate = bench.mse_wavefunctions(pred, ref)
    try:
        bench.analyse_prediction(rep, pred, args.system, opts)
    except (WavecastrError, ValueError) as exc:
        rep.error = f"{type(exc).__name__}: {exc}"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep.series_file = "mse.csv"
    formats.atomic_write_text(out / rep.series_file, formats.csv_text(
        ["step", "time", "mse"], ((k, k * pred.dt, float(v)) for k, v in enumerate(rep.mse_series, 1))))
    formats.atomic_write_text(out / "report.json", rep.to_json())
    print(f"aggregate MSE {rep.mse_wavefunction_aggregate:.3e}, energy MSE {rep.mse_energies}")
    return 0 if rep.ok else EXIT_DOMAIN


def cmd_compare(args) -> int:
    cfg = _load_config(args, args.system)
    cfg = bench.dataclasses.replace(cfg, output_dir=str(args.out))
    cmp = bench.compare_modes(cfg)
    for rep in (cmp.standard, cmp.multistep):
        status = "ok" if rep.ok else f"failed at {rep.failure_stage}: {rep.error}"
        print(f"{rep.mode:9s} mse_wavefunction={rep.mse_wavefunction_aggregate} "
              f"mse_energies={rep.mse_energies} ({status})")
    return 0 if cmp.standard.ok and cmp.multistep.ok else EXIT_DOMAIN


def cmd_presets(args) -> int:
    out = {}
    for name in PRESET_NAMES:
        cfg = bench.default_config(name)
        out[name] = {"system": preset_system(name).describe(),
                     "reservoir": cfg.reservoir.to_dict(),
                     "spectral": bench.dataclasses.asdict(cfg.spectral)}
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavecastr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, system_required=False):
        sp.add_argument("--seed", type=int, default=None, help="overrides WAVECASTR_SEED")
        sp.add_argument("--system", choices=PRESET_NAMES, required=system_required)

    def spectral_flags(sp):
        sp.add_argument("--window", choices=spectral.WINDOWS, default=None)
        sp.add_argument("--pad", type=int, default=None, help="zero-padding factor")
        sp.add_argument("--threshold", type=float, default=None, help="relative peak threshold")

    g = sub.add_parser("generate", help="write exact train/test trajectories")
    common(g)
    g.add_argument("--config")
    g.add_argument("--profile", choices=bench.PROFILES, default="full")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a reservoir on a trajectory file")
    common(t)
    t.add_argument("--config")
    t.add_argument("--profile", choices=bench.PROFILES, default="full")
    t.add_argument("--train", required=True, help="training trajectory (.wftraj)")
    t.add_argument("--mode", choices=bench.MODES, default=None)
    t.add_argument("--out", required=True, help="model file (.esnmod)")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="closed-loop prediction from a trained model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--seed-traj", required=True, help="trajectory that warms up the reservoir")
    pr.add_argument("--n-steps", type=int, required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("spectrum", help="energy spectrum and peaks of a trajectory")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--system", choices=PRESET_NAMES, default=None, help="use this system's window defaults")
    spectral_flags(s)
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_spectrum)

    e = sub.add_parser("eigenfunctions", help="extract eigenfunctions at given energies")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--energy", type=float, action="append", required=True)
    e.add_argument("--system", choices=PRESET_NAMES, default=None)
    spectral_flags(e)
    e.add_argument("--out", default=".", help="output directory")
    e.set_defaults(func=cmd_eigenfunctions)

    r = sub.add_parser("report", help="metrics of a predicted against an exact trajectory")
    common(r, system_required=True)
    r.add_argument("--pred", required=True)
    r.add_argument("--ref", required=True)
    r.add_argument("--mode", choices=bench.MODES, default=None)
    spectral_flags(r)
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("compare", help="standard vs multi-step on shared matrices and data")
    common(c, system_required=True)
    c.add_argument("--config")
    c.add_argument("--profile", choices=bench.PROFILES, default="full")
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(func=cmd_compare)

    ps = sub.add_parser("presets", help="print preset systems and hyperparameters")
    ps.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (WavecastrError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
