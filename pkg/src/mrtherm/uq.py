"""Quadrature rules and weighted ensemble moments.

Moments of the temperature field and of the k-space signal are weighted
sums over forward runs at quadrature nodes in parameter space. Weights are
normalised to sum to one, i.e. they already include the prior density.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mrtherm.bioheat import SolverSettings, initial_field, solve_pennes
from mrtherm.errors import DomainError, NumericalError
from mrtherm.mrsignal import MrProtocol, signal_from_temperature
from mrtherm.phantom import Phantom, UniformPrior

MAX_TENSOR_DIM = 4


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray  # (M, d)
    weights: np.ndarray  # (M,)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if nodes.shape[0] != len(self.weights):
            raise DomainError("one weight per node required")

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def expect(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=1)


def gauss_legendre(n: int, lo: float, hi: float) -> QuadratureRule:
    """``n``-point Gauss-Legendre rule for the uniform density on ``[lo, hi]``.

    Exact for polynomials up to degree ``2n - 1``.
    """
    if n < 1:
        raise DomainError("need at least one node")
    if not lo < hi:
        raise DomainError("need lo < hi")
    x, w = np.polynomial.legendre.leggauss(n)
    nodes = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    return QuadratureRule(nodes[:, None], w / w.sum())


def tensor_rule(rules: Sequence[QuadratureRule]) -> QuadratureRule:
    """Cartesian product of one-dimensional rules."""
    if not 1 <= len(rules) <= MAX_TENSOR_DIM:
        raise DomainError(f"tensor rules support 1 to {MAX_TENSOR_DIM} dimensions, got {len(rules)}")
    if any(r.dim != 1 for r in rules):
        raise DomainError("tensor_rule expects one-dimensional factors")
    nodes, weights = [], []
    for combo in itertools.product(*[range(r.size) for r in rules]):
        nodes.append([r.nodes[i, 0] for r, i in zip(rules, combo)])
        weights.append(np.prod([r.weights[i] for r, i in zip(rules, combo)]))
    weights = np.asarray(weights)
    return QuadratureRule(np.asarray(nodes), weights / weights.sum())


def prior_rule(prior: UniformPrior, nodes_per_dim: int) -> QuadratureRule:
    return tensor_rule([gauss_legendre(nodes_per_dim, lo, hi) for lo, hi in zip(prior.lower, prior.upper)])


def moments(values: np.ndarray, weights: np.ndarray, order: int = 1) -> np.ndarray:
    """Weighted mean (``order=1``) or central moment of order ``order``.

    ``values`` has the ensemble on its first axis. For complex data the
    second moment is the total variance ``sum w |v - mean|^2``.
    """
    if order < 1:
        raise DomainError("moment order must be >= 1")
    values = np.asarray(values)
    weights = np.asarray(weights, dtype=float)
    mean = np.tensordot(weights, values, axes=1)
    if order == 1:
        return mean
    dev = values - mean
    if order == 2 and np.iscomplexobj(dev):
        return np.tensordot(weights, dev.real**2 + dev.imag**2, axes=1)
    return np.tensordot(weights, dev**order, axes=1)


@dataclass(frozen=True)
class Ensemble:
    """Forward runs at every quadrature node, stored at one fusion time.

    Attributes
    ----------
    rule : QuadratureRule
        Nodes are the attenuation vectors.
    temperatures : np.ndarray
        ``(M, *dims)`` temperature at the fusion time, degC.
    signals : np.ndarray
        ``(M, *dims)`` noiseless k-space at the fusion time, FFT order.
    baseline : np.ndarray
        Pre-heating temperature used as the PRF reference.
    fusion_time : float
    """

    rule: QuadratureRule
    temperatures: np.ndarray
    signals: np.ndarray
    baseline: np.ndarray
    fusion_time: float

    @property
    def params(self) -> np.ndarray:
        return self.rule.nodes

    @property
    def weights(self) -> np.ndarray:
        return self.rule.weights

    def temperature_mean(self) -> np.ndarray:
        return moments(self.temperatures, self.weights, 1)

    def temperature_std(self) -> np.ndarray:
        return np.sqrt(np.maximum(moments(self.temperatures, self.weights, 2), 0.0))

    def signal_mean(self) -> np.ndarray:
        return moments(self.signals, self.weights, 1)

    def signal_variance(self) -> np.ndarray:
        return moments(self.signals, self.weights, 2)

    def parameter_mean(self) -> np.ndarray:
        return self.weights @ self.params

    def parameter_covariance(self) -> np.ndarray:
        dev = self.params - self.parameter_mean()
        return (dev * self.weights[:, None]).T @ dev


def baseline_temperature(phantom: Phantom) -> np.ndarray:
    """Pre-heating field used as the PRF phase reference."""
    return initial_field(phantom)


def forward_member(phantom: Phantom, mu: Sequence[float], protocol: MrProtocol, settings: SolverSettings,
                   fusion_time: float, baseline: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Temperature and noiseless k-space at ``fusion_time`` for one attenuation vector."""
    history = solve_pennes(phantom, mu, settings)
    u = history.at(fusion_time)
    signal = signal_from_temperature(u, baseline, protocol, phantom.labels, phantom.grid.voxel_volume)
    return u, signal


def propagate_ensemble(phantom: Phantom, rule: QuadratureRule, protocol: MrProtocol, settings: SolverSettings,
                       fusion_time: float | None = None, threads: int = 1) -> Ensemble:
    """Run the forward model at every node; members are stored in node order."""
    if rule.dim != phantom.num_tissues:
        raise DomainError(f"rule has dimension {rule.dim}, phantom has {phantom.num_tissues} tissues")
    if np.any(rule.nodes <= 0):
        raise DomainError("quadrature nodes must be positive attenuation values")
    t_fuse = settings.output_times[-1] if fusion_time is None else float(fusion_time)
    baseline = baseline_temperature(phantom)

    def run(q):
        try:
            return forward_member(phantom, rule.nodes[q], protocol, settings, t_fuse, baseline)
        except (NumericalError, DomainError) as exc:
            raise type(exc)(f"quadrature node {q}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(rule.size)))
    else:
        results = [run(q) for q in range(rule.size)]
    temps = np.stack([r[0] for r in results])
    signals = np.stack([r[1] for r in results])
    return Ensemble(rule, temps, signals, baseline, t_fuse)
