"""End-to-end synthetic experiments: truth, ensemble, sampling, fusion, error.

One experiment evaluates a grid of cells ``(method, line count, repetition)``.
Every cell sees the same prior ensemble and the same noiseless truth; the
repetition index only changes the measurement noise and, for Poisson-disk
patterns, the dart sequence.

Seeds
-----
All randomness derives from ``master_seed`` through
``numpy.random.SeedSequence(master_seed, spawn_key=(role, rep))`` with
roles ``0`` measurement noise, ``1`` Poisson darts and ``2`` sampling the
true attenuation. The first 32-bit word of the generated state is the
integer seed handed to the consumer, so a cell is reproducible on its own.
"""

from __future__ import annotations

import csv
import io as _io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from mrtherm import presets
from mrtherm.bioheat import SolverSettings, solve_pennes, stable_timestep
from mrtherm.errors import ConfigError, DomainError, NumericalError
from mrtherm.fusion import ParameterStats, fuse
from mrtherm.mrsignal import MrProtocol, NoiseModel, add_noise, signal_from_temperature
from mrtherm.phantom import Phantom, build_phantom, load_config
from mrtherm.recon import error_metrics, reconstruct_temperature
from mrtherm.sampling import (METHODS, SamplingPattern, default_readout_axis, line_scores, poisson_disk_pattern,
                              rectilinear_pattern, select_lines_maxvar)
from mrtherm.uq import Ensemble, baseline_temperature, prior_rule, propagate_ensemble

log = logging.getLogger(__name__)

ROLE_NOISE, ROLE_DARTS, ROLE_TRUTH = 0, 1, 2

REPORT_COLUMNS = ("method", "lines", "seed", "fraction", "rmse", "max_err", "trace_post", "post_mean", "post_var",
                  "clamped", "status")


def derive_seed(master_seed: int, role: int, rep: int = 0) -> int:
    """Integer seed for one consumer, independent of evaluation order."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(role), int(rep)))
    return int(seq.generate_state(1)[0])


def _snr(value) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "noiseless"):
        return math.inf
    try:
        snr = float(value)
    except (TypeError, ValueError):
        raise ConfigError("snr", f"expected a number or 'inf', got {value!r}") from None
    if not snr > 0:
        raise ConfigError("snr", "must be positive")
    return snr


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``true_mu`` is either a list (one value per tissue) or ``"sample:SEED"``
    to draw it uniformly from the prior. ``model_snr`` sets the noise
    variance the update assumes; it defaults to ``snr`` and must be finite,
    so a noiseless run (``snr = inf``) needs it explicitly.
    """

    phantom: dict
    protocol: dict
    true_mu: object
    fusion_time: float
    name: str = "experiment"
    methods: tuple[str, ...] = METHODS
    lines: tuple[int, ...] = (0,)
    snr: float = 50.0
    model_snr: float | None = None
    seeds: int = 1
    master_seed: int = 0
    nodes_per_dim: int = 3
    dt: float | None = None
    distance_clamp: float = 0.0
    min_separation: float = 1.0
    poisson_r0: float = 1.0
    poisson_beta: float = 2.0
    roi: tuple | None = None
    base_dir: str | None = None

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError("methods", f"unknown method(s) {bad}; choose from {list(METHODS)}")
        if any(int(n) < 0 for n in self.lines):
            raise ConfigError("lines", "line counts must be nonnegative")
        if self.seeds < 1:
            raise ConfigError("seeds", "need at least one repetition")
        if self.nodes_per_dim < 1:
            raise ConfigError("quadrature", "nodes_per_dim must be >= 1")
        if not self.fusion_time > 0:
            raise ConfigError("fusion_time", "must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt", "must be positive")
        if self.master_seed < 0:
            raise ConfigError("master_seed", "must be nonnegative")
        if math.isinf(self.assumed_snr):
            raise ConfigError("model_snr", "a finite model SNR is required when the data are noiseless")

    @property
    def assumed_snr(self) -> float:
        return self.snr if self.model_snr is None else self.model_snr

    @classmethod
    def from_mapping(cls, cfg: Mapping, base_dir: str | Path | None = None) -> "ExperimentConfig":
        """Build from a config mapping, optionally layered over a preset.

        A ``preset`` key loads a built-in experiment first; every other
        top-level key then replaces the preset value.
        """
        cfg = dict(cfg)
        if "preset" in cfg:
            merged = presets.get(cfg.pop("preset"))
            merged.update(cfg)
            cfg = merged
        for key in ("phantom", "protocol", "true_mu", "fusion_time"):
            if key not in cfg:
                raise ConfigError(key, "required")
        phantom = cfg["phantom"]
        if isinstance(phantom, str):
            path = Path(base_dir or ".") / phantom
            if not path.exists():
                raise ConfigError("phantom", f"file not found: {path}")
            phantom = load_config(path)
            base_dir = path.parent
        quad = cfg.get("quadrature", {})
        poisson = cfg.get("poisson", {})
        solver = cfg.get("solver", {})
        roi = cfg.get("roi")
        try:
            return cls(
                phantom=dict(phantom),
                protocol=dict(cfg["protocol"]),
                true_mu=cfg["true_mu"],
                fusion_time=float(cfg["fusion_time"]),
                name=str(cfg.get("name", "experiment")),
                methods=tuple(cfg.get("methods", METHODS)),
                lines=tuple(int(n) for n in cfg.get("lines", (0,))),
                snr=_snr(cfg.get("snr", 50.0)),
                model_snr=None if cfg.get("model_snr") is None else _snr(cfg["model_snr"]),
                seeds=int(cfg.get("seeds", 1)),
                master_seed=int(cfg.get("master_seed", 0)),
                nodes_per_dim=int(quad.get("nodes_per_dim", 3)),
                dt=None if solver.get("dt") is None else float(solver["dt"]),
                distance_clamp=float(solver.get("distance_clamp", 0.0)),
                min_separation=float(cfg.get("min_separation", 1.0)),
                poisson_r0=float(poisson.get("r0", 1.0)),
                poisson_beta=float(poisson.get("beta", 2.0)),
                roi=None if roi is None else tuple(tuple(int(v) for v in pair) for pair in roi),
                base_dir=None if base_dir is None else str(base_dir),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, DomainError):
                raise
            raise ConfigError("config", str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_mapping(load_config(path), base_dir=path.parent)

    @classmethod
    def preset(cls, name: str) -> "ExperimentConfig":
        return cls.from_mapping({"preset": name})

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass(frozen=True)
class ExperimentRecord:
    """Outcome of one ``(method, lines, seed)`` cell."""

    method: str
    lines: int
    seed: int
    fraction: float = math.nan
    rmse: float = math.nan
    max_err: float = math.nan
    posterior: ParameterStats | None = None
    wall_ms: float = 0.0
    error: str | None = None

    @property
    def trace_post(self) -> float:
        return math.nan if self.posterior is None else self.posterior.trace

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    phantom: Phantom
    settings: SolverSettings
    true_mu: np.ndarray
    truth: np.ndarray
    clean_signal: np.ndarray
    ensemble: Ensemble
    prior: ParameterStats
    prior_error: float
    scores: np.ndarray
    readout_axis: int
    records: list[ExperimentRecord] = field(default_factory=list)
    patterns: dict = field(default_factory=dict)

    def mean_rmse(self, method: str, lines: int) -> float:
        vals = [r.rmse for r in self.records if r.method == method and r.lines == lines and r.ok]
        return float(np.mean(vals)) if vals else math.nan


def resolve_true_mu(config: ExperimentConfig, phantom: Phantom) -> np.ndarray:
    spec = config.true_mu
    if isinstance(spec, str):
        kind, _, seed = spec.partition(":")
        if kind != "sample" or not seed.strip().lstrip("-").isdigit():
            raise ConfigError("true_mu", f"expected a list or 'sample:SEED', got {spec!r}")
        rng = np.random.default_rng(derive_seed(int(seed), ROLE_TRUTH))
        return rng.uniform(phantom.prior.lower, phantom.prior.upper)
    mu = np.atleast_1d(np.asarray(spec, dtype=float))
    if mu.shape != (phantom.num_tissues,):
        raise ConfigError("true_mu", f"need {phantom.num_tissues} values, got {mu.size}")
    if np.any(mu <= 0):
        raise ConfigError("true_mu", "attenuation must be positive")
    return mu


def build_setup(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Everything shared by all cells: truth, noiseless signal, ensemble, scores."""
    phantom = build_phantom(config.phantom, base_dir=config.base_dir)
    protocol = MrProtocol.from_config(config.protocol, phantom.num_tissues)
    dt = config.dt if config.dt is not None else stable_timestep(phantom)
    settings = SolverSettings(dt, (config.fusion_time,), config.distance_clamp)
    true_mu = resolve_true_mu(config, phantom)
    baseline = baseline_temperature(phantom)
    truth = solve_pennes(phantom, true_mu, settings).at(config.fusion_time)
    clean = signal_from_temperature(truth, baseline, protocol, phantom.labels, phantom.grid.voxel_volume)
    rule = prior_rule(phantom.prior, config.nodes_per_dim)
    ensemble = propagate_ensemble(phantom, rule, protocol, settings, config.fusion_time, threads=threads)
    prior = ParameterStats(ensemble.parameter_mean(), ensemble.parameter_covariance())
    prior_field = reconstruct_temperature(phantom, prior, settings).mean
    prior_error = error_metrics(prior_field, truth, config.roi).rmse
    axis = default_readout_axis(truth.ndim)
    scores = line_scores(ensemble.signal_variance(), axis, center=True)
    return ExperimentResult(config, phantom, settings, true_mu, truth, clean, ensemble, prior, prior_error,
                            scores, axis)


def make_pattern(setup: ExperimentResult, method: str, n: int, rep: int = 0) -> SamplingPattern:
    cfg = setup.config
    shape = setup.scores.shape
    if n > int(np.prod(shape)):
        raise DomainError(f"{n} lines requested but only {int(np.prod(shape))} phase-encode lines exist")
    if method == "maxvar":
        return select_lines_maxvar(setup.scores, n, cfg.min_separation, setup.readout_axis)
    if method == "rectilinear":
        return rectilinear_pattern(shape, n, setup.readout_axis)
    if method == "poisson":
        pat = poisson_disk_pattern(shape, n, cfg.poisson_r0, cfg.poisson_beta,
                                   seed=derive_seed(cfg.master_seed, ROLE_DARTS, rep), readout_axis=setup.readout_axis)
        if "shortfall" in pat.params:
            raise DomainError(f"poisson-disk pattern placed {len(pat)} of {n} lines")
        return pat
    raise ConfigError("methods", f"unknown method {method!r}")


def noise_for(setup: ExperimentResult, rep: int) -> tuple[np.ndarray, float]:
    """Measured k-space for repetition ``rep`` and the noise sigma the update assumes."""
    cfg = setup.config
    seed = derive_seed(cfg.master_seed, ROLE_NOISE, rep)
    data_noise = NoiseModel.from_snr(setup.clean_signal, cfg.snr, seed)
    model_noise = NoiseModel.from_snr(setup.clean_signal, cfg.assumed_snr, seed)
    return add_noise(setup.clean_signal, data_noise), model_noise.sigma


def run_cell(setup: ExperimentResult, method: str, n: int, rep: int, measured=None, sigma=None):
    """One cell; numerical and domain failures become an error-tagged record."""
    start = time.perf_counter()
    try:
        if measured is None:
            measured, sigma = noise_for(setup, rep)
        pattern = make_pattern(setup, method, n, rep)
        bounds = (setup.phantom.prior.lower, setup.phantom.prior.upper)
        post = fuse(setup.ensemble, pattern, measured, sigma, prior=setup.prior, bounds=bounds)
        estimate = reconstruct_temperature(setup.phantom, post, setup.settings).mean
        err = error_metrics(estimate, setup.truth, setup.config.roi)
    except (DomainError, NumericalError) as exc:
        tag = "numerical" if isinstance(exc, NumericalError) else "domain"
        log.warning("cell %s/%d/%d failed: %s", method, n, rep, exc)
        return ExperimentRecord(method, n, rep, wall_ms=_ms(start), error=f"{tag}: {exc}"), None
    rec = ExperimentRecord(method, n, rep, pattern.fraction, err.rmse, err.max_abs_error, post, _ms(start))
    return rec, pattern


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1e3


def run_experiment(config: ExperimentConfig, threads: int = 1, setup: ExperimentResult | None = None
                   ) -> ExperimentResult:
    """Evaluate every ``(method, lines, seed)`` cell of ``config``.

    Records come back in method, line-count, seed order regardless of
    ``threads``. Patterns are kept per ``(method, lines, seed)``. A prebuilt
    ``setup`` is reused as is; only the cell grid, seeds and noise settings
    of ``config`` apply to it.
    """
    setup = build_setup(config, threads) if setup is None else replace(setup, config=config, records=[], patterns={})
    noise = [noise_for(setup, rep) for rep in range(config.seeds)]
    cells = [(m, int(n), rep) for m in config.methods for n in config.lines for rep in range(config.seeds)]

    def work(cell):
        m, n, rep = cell
        return run_cell(setup, m, n, rep, *noise[rep])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, cells))
    else:
        outcomes = [work(c) for c in cells]
    setup.records = [rec for rec, _ in outcomes]
    setup.patterns = {c: pat for c, (_, pat) in zip(cells, outcomes) if pat is not None}
    return setup


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _vec(v) -> str:
    return "" if v is None else " ".join(repr(float(x)) for x in v)


def report_csv(records: Sequence[ExperimentRecord]) -> str:
    """Deterministic CSV text: no timings, floats in shortest round-trip form."""
    if not records:
        raise DomainError("no records to report")
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in records:
        post = r.posterior
        writer.writerow([r.method, r.lines, r.seed, _fmt(r.fraction), _fmt(r.rmse), _fmt(r.max_err),
                         _fmt(r.trace_post), _vec(None if post is None else post.mean),
                         _vec(None if post is None else post.variance), "" if post is None else int(post.clamped),
                         "ok" if r.ok else r.error])
    return buf.getvalue()


def timings_csv(records: Sequence[ExperimentRecord]) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "lines", "seed", "wall_ms"])
    for r in records:
        writer.writerow([r.method, r.lines, r.seed, f"{r.wall_ms:.3f}"])
    return buf.getvalue()


def summarize(records: Sequence[ExperimentRecord], prior_error: float | None = None) -> dict:
    """Seed-averaged metrics per ``(method, lines)``."""
    if not records:
        raise DomainError("no records to summarize")
    groups: dict[tuple[str, int], list[ExperimentRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.lines), []).append(r)
    rows = []
    for (method, n), recs in groups.items():
        ok = [r for r in recs if r.ok]
        rows.append({
            "method": method,
            "lines": n,
            "cells": len(recs),
            "failed": len(recs) - len(ok),
            "fraction": ok[0].fraction if ok else None,
            "rmse_mean": float(np.mean([r.rmse for r in ok])) if ok else None,
            "max_err_mean": float(np.mean([r.max_err for r in ok])) if ok else None,
            "trace_post_mean": float(np.mean([r.trace_post for r in ok])) if ok else None,
        })
    out = {"groups": rows}
    if prior_error is not None:
        out["prior_rmse"] = float(prior_error)
    return out


def export_report(result: ExperimentResult | Sequence[ExperimentRecord], out_dir: str | Path) -> dict[str, Path]:
    """Write ``report.csv``, ``timings.csv`` and ``summary.json`` into ``out_dir``."""
    if isinstance(result, ExperimentResult):
        records, prior_error = result.records, result.prior_error
    else:
        records, prior_error = list(result), None
    if not records:
        raise DomainError("no records to export")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.csv", "timings": out / "timings.csv", "summary": out / "summary.json"}
    paths["report"].write_text(report_csv(records))
    paths["timings"].write_text(timings_csv(records))
    summary = summarize(records, prior_error)
    if isinstance(result, ExperimentResult):
        summary["experiment"] = result.config.name
        summary["true_mu"] = [float(v) for v in result.true_mu]
        summary["master_seed"] = result.config.master_seed
        summary["phase_encode_lines"] = int(np.prod(result.scores.shape))
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return paths


def read_report(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
