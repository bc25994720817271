"""Refined-model temperature reconstruction and error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from mrtherm.bioheat import SolverSettings, solve_pennes
from mrtherm.errors import DomainError
from mrtherm.fusion import ParameterStats
from mrtherm.phantom import Phantom
from mrtherm.uq import gauss_legendre, moments, tensor_rule


@dataclass(frozen=True)
class ReconstructionResult:
    mean: np.ndarray
    std: np.ndarray | None
    posterior: ParameterStats
    time: float
    provenance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ErrorReport:
    rmse: float
    max_abs_error: float
    region: str = "full"


def reconstruct_temperature(phantom: Phantom, posterior: ParameterStats, settings: SolverSettings,
                            time: float | None = None, provenance: dict | None = None,
                            with_std: bool = False) -> ReconstructionResult:
    """Bioheat solve at the posterior mean attenuation.

    The std field is zero for a zero posterior covariance, comes from
    :func:`posterior_temperature_stats` when ``with_std`` is set, and is
    ``None`` otherwise.
    """
    t = settings.output_times[-1] if time is None else time
    mean = solve_pennes(phantom, posterior.mean, settings).at(t)
    if not np.any(posterior.covariance):
        std = np.zeros_like(mean)
    elif with_std:
        std = posterior_temperature_stats(phantom, posterior, settings, time=t)[1]
    else:
        std = None
    return ReconstructionResult(mean, std, posterior, t, dict(provenance or {}))


def region_slices(region: Sequence[Sequence[int]] | None, dims: Sequence[int]) -> tuple[slice, ...]:
    """Index box ``[[lo, hi), ...]`` per axis; ``None`` means the full grid."""
    if region is None:
        return tuple(slice(None) for _ in dims)
    if len(region) != len(dims):
        raise DomainError("region needs one [lo, hi) pair per axis")
    return tuple(slice(int(lo), int(hi)) for lo, hi in region)


def error_metrics(estimate: np.ndarray, truth: np.ndarray, region=None) -> ErrorReport:
    """RMSE and maximum absolute error over a box region (full grid by default)."""
    if estimate.shape != truth.shape:
        raise DomainError("estimate and truth must share a grid")
    sl = region_slices(region, estimate.shape)
    diff = (estimate - truth)[sl]
    if diff.size == 0:
        raise DomainError("error region is empty")
    label = "full" if region is None else "box" + "x".join(f"{lo}:{hi}" for lo, hi in region)
    return ErrorReport(float(np.sqrt(np.mean(diff**2))), float(np.max(np.abs(diff))), label)


def posterior_temperature_stats(phantom: Phantom, posterior: ParameterStats, settings: SolverSettings,
                                nodes_per_dim: int | None = None, time: float | None = None):
    """Temperature mean and std under a Gaussian approximation of the posterior.

    Each parameter with nonzero variance gets a Gauss-Legendre rule over
    ``mean +/- 3 std`` clipped to the prior support; node weights are the
    Legendre weights times the posterior Gaussian density, renormalised.
    Parameters with zero variance, and every parameter when
    ``nodes_per_dim == 1``, sit at the posterior mean.
    """
    d = len(posterior.mean)
    if nodes_per_dim is None:
        nodes_per_dim = 5 if d == 1 else 3
    if nodes_per_dim < 1:
        raise DomainError("nodes_per_dim must be >= 1")
    t = settings.output_times[-1] if time is None else time
    std = np.sqrt(np.maximum(posterior.variance, 0.0))
    rules = []
    for i in range(d):
        m = posterior.mean[i]
        if nodes_per_dim == 1 or std[i] == 0:
            rules.append(gauss_legendre(1, m - 1.0, m + 1.0))
            continue
        lo = max(m - 3 * std[i], phantom.prior.lower[i])
        hi = min(m + 3 * std[i], phantom.prior.upper[i])
        if not lo < hi:
            rules.append(gauss_legendre(1, m - 1.0, m + 1.0))
            continue
        rules.append(gauss_legendre(nodes_per_dim, lo, hi))
    rule = tensor_rule(rules)
    active = std > 0
    if rule.size > 1 and np.any(active):
        cov = posterior.covariance[np.ix_(active, active)]
        density = stats.multivariate_normal(posterior.mean[active], cov, allow_singular=True).pdf(
            rule.nodes[:, active])
        weights = rule.weights * np.atleast_1d(density)
        weights = weights / weights.sum()
    else:
        weights = rule.weights
    fields = np.stack([solve_pennes(phantom, node, settings).at(t) for node in rule.nodes])
    mean = moments(fields, weights, 1)
    var = np.maximum(moments(fields, weights, 2), 0.0)
    return mean, np.sqrt(var)
