"""Command-line entry point: ``mrtherm {run,sweep,pattern,forward,report}``.

Exit status is 0 on success, 2 for invalid input and 3 for numerical
failures (solver divergence, indefinite covariance).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from mrtherm import io
from mrtherm.bioheat import SolverSettings, solve_pennes, stable_timestep
from mrtherm.errors import ConfigError, DomainError, NumericalError
from mrtherm.experiment import (ROLE_NOISE, ExperimentConfig, ExperimentRecord, build_setup, derive_seed,
                                export_report, make_pattern, read_report, resolve_true_mu, run_experiment, summarize)
from mrtherm.mrsignal import MrProtocol, NoiseModel, add_noise, signal_from_temperature
from mrtherm.phantom import build_phantom
from mrtherm.sampling import default_readout_axis
from mrtherm.uq import baseline_temperature

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("mrtherm")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _add_common(p: argparse.ArgumentParser, out_default: str) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="YAML experiment config")
    src.add_argument("--preset", help="built-in experiment: volumetric, planar or agar")
    p.add_argument("--out", type=Path, default=Path(out_default), help="output directory")
    p.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    p.add_argument("--methods", type=_str_list, help="comma-separated sampling methods")
    p.add_argument("--lines", type=_int_list, help="comma-separated line counts")
    p.add_argument("--threads", type=int, default=1, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrtherm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="full pipeline with field and pattern dumps"), "out/run")
    _add_common(sub.add_parser("sweep", help="method x line-count x seed grid, report only"), "out/sweep")
    _add_common(sub.add_parser("pattern", help="write sampling patterns as CSV"), "out/patterns")
    _add_common(sub.add_parser("forward", help="ground-truth temperature and k-space dumps"), "out/forward")
    rep = sub.add_parser("report", help="seed-averaged table from a report CSV")
    rep.add_argument("path", nargs="?", type=Path, help="report.csv or a directory containing it")
    rep.add_argument("--out", type=Path, help="directory containing report.csv")
    return parser


def load_experiment(args) -> ExperimentConfig:
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError("config", f"file not found: {args.config}")
        cfg = ExperimentConfig.load(args.config)
    elif args.preset is not None:
        cfg = ExperimentConfig.preset(args.preset)
    else:
        raise ConfigError("config", "pass --config PATH or --preset NAME")
    return cfg.with_overrides(master_seed=args.seed, methods=args.methods, lines=args.lines)


def cmd_forward(cfg: ExperimentConfig, out: Path, threads: int) -> None:
    phantom = build_phantom(cfg.phantom, base_dir=cfg.base_dir)
    protocol = MrProtocol.from_config(cfg.protocol, phantom.num_tissues)
    dt = cfg.dt if cfg.dt is not None else stable_timestep(phantom)
    settings = SolverSettings(dt, (cfg.fusion_time,), cfg.distance_clamp)
    mu = resolve_true_mu(cfg, phantom)
    history = solve_pennes(phantom, mu, settings)
    clean = signal_from_temperature(history.at(cfg.fusion_time), baseline_temperature(phantom), protocol,
                                    phantom.labels, phantom.grid.voxel_volume)
    out.mkdir(parents=True, exist_ok=True)
    axis = default_readout_axis(clean.ndim)
    io.write_temperature_history(out / "temperature.f64", history, phantom.grid)
    io.write_kspace(out / "kspace_clean.f64", clean, phantom.grid.spacing, axis)
    seed = derive_seed(cfg.master_seed, ROLE_NOISE, 0)
    noisy = add_noise(clean, NoiseModel.from_snr(clean, cfg.snr, seed))
    io.write_kspace(out / "kspace_noisy.f64", noisy, phantom.grid.spacing, axis, cfg.snr, seed)
    print(f"true mu {np.array2string(mu, precision=3)}; peak temperature {history.fields[-1].max():.3f} degC")


def cmd_pattern(cfg: ExperimentConfig, out: Path, threads: int) -> None:
    setup = build_setup(cfg, threads)
    out.mkdir(parents=True, exist_ok=True)
    io.write_array(out / "line_scores.f64", setup.scores, kind="line_scores", readout_axis=setup.readout_axis,
                   view="centered")
    for method in cfg.methods:
        for n in cfg.lines:
            pat = make_pattern(setup, method, n, 0)
            path = io.write_pattern(out / f"{method}_{n}.csv", pat)
            print(f"{path}: {len(pat)} lines, fraction {pat.fraction:.4f}")


def _print_summary(summary: dict) -> None:
    if "prior_rmse" in summary:
        print(f"prior rmse {summary['prior_rmse']:.4f}")
    print(f"{'method':<12}{'lines':>6}{'rmse':>10}{'max_err':>10}{'trace':>14}{'failed':>8}")
    for g in summary["groups"]:
        rmse = "nan" if g["rmse_mean"] is None else f"{g['rmse_mean']:.4f}"
        mx = "nan" if g["max_err_mean"] is None else f"{g['max_err_mean']:.4f}"
        tr = "nan" if g["trace_post_mean"] is None else f"{g['trace_post_mean']:.4g}"
        print(f"{g['method']:<12}{g['lines']:>6}{rmse:>10}{mx:>10}{tr:>14}{g['failed']:>8}")


def cmd_sweep(cfg: ExperimentConfig, out: Path, threads: int, dump: bool = False) -> None:
    result = run_experiment(cfg, threads)
    paths = export_report(result, out)
    if dump:
        grid = result.phantom.grid
        io.write_array(out / "truth.f64", result.truth, kind="temperature", units="degC",
                       spacing=list(grid.spacing), time=cfg.fusion_time)
        io.write_array(out / "ensemble_mean.f64", result.ensemble.temperature_mean(), kind="temperature",
                       units="degC", spacing=list(grid.spacing), time=cfg.fusion_time)
        io.write_array(out / "ensemble_std.f64", result.ensemble.temperature_std(), kind="temperature_std",
                       units="degC", spacing=list(grid.spacing), time=cfg.fusion_time)
        io.write_kspace(out / "kspace_clean.f64", result.clean_signal, grid.spacing, result.readout_axis)
        io.write_ensemble_summary(out / "ensemble.csv", result.ensemble)
        for (method, n, rep), pat in result.patterns.items():
            if rep == 0:
                io.write_pattern(out / f"pattern_{method}_{n}.csv", pat)
        for rec in result.records:
            if rec.ok and rec.seed == 0:
                io.write_posterior(out / f"posterior_{rec.method}_{rec.lines}.csv", result.prior, rec.posterior,
                                   rec.lines)
    _print_summary(summarize(result.records, result.prior_error))
    print(f"report written to {paths['report']}")
    failed = [r for r in result.records if not r.ok]
    if failed:
        print(f"{len(failed)} cell(s) failed; see the status column", file=sys.stderr)


def cmd_report(path: Path | None) -> None:
    if path is None:
        raise ConfigError("report", "pass a report path or --out DIR")
    if path.is_dir():
        path = path / "report.csv"
    if not path.exists():
        raise ConfigError("report", f"file not found: {path}")
    rows = read_report(path)
    if not rows:
        raise DomainError("report has no rows")
    records = []
    for row in rows:
        ok = row["status"] == "ok"
        records.append(ExperimentRecord(row["method"], int(row["lines"]), int(row["seed"]),
                                        rmse=float(row["rmse"]) if ok else float("nan"),
                                        max_err=float(row["max_err"]) if ok else float("nan"),
                                        error=None if ok else row["status"]))
    summary = summarize(records)
    traces: dict = {}
    for row in rows:
        if row["status"] == "ok":
            traces.setdefault((row["method"], int(row["lines"])), []).append(float(row["trace_post"]))
    for g in summary["groups"]:
        vals = traces.get((g["method"], g["lines"]))
        g["trace_post_mean"] = float(np.mean(vals)) if vals else None
    _print_summary(summary)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            cmd_report(args.path or args.out)
            return EXIT_OK
        if args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        cfg = load_experiment(args)
        if args.command == "forward":
            cmd_forward(cfg, args.out, args.threads)
        elif args.command == "pattern":
            cmd_pattern(cfg, args.out, args.threads)
        else:
            cmd_sweep(cfg, args.out, args.threads, dump=args.command == "run")
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DomainError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
