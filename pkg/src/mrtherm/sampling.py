"""Readout-line selection for undersampled k-space acquisition.

Lines are addressed in the *centered* k-space view (zero frequency at
index ``n // 2`` on each axis) so that index distance equals frequency
distance. In 2D a line is one phase-encode index; in 3D it is a pair of
indices on the phase-encode plane with the readout running along the
remaining axis.

Three strategies are provided: greedy maximisation of the summed ensemble
signal variance along each line, a rectilinear stride, and variable-density
Poisson-disk dart throwing. A brute-force mutual-information estimator for
one-parameter toys backs up the variance proxy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from mrtherm.errors import DomainError
from mrtherm.mrsignal import centered

METHODS = ("maxvar", "rectilinear", "poisson")


@dataclass(frozen=True)
class SamplingPattern:
    """Ordered readout lines.

    Attributes
    ----------
    readout_axis : int
        Axis of the k-space array swept by each line.
    shape : tuple of int
        Extents of the phase-encode axes (all axes except the readout), in order.
    lines : tuple of tuple of int
        Centered indices on the phase-encode axes, in selection order.
    method : str
    min_separation : float
        Minimum Euclidean index distance between any two lines.
    params : dict
        Provenance (seed, radii, achieved count, ...).
    """

    readout_axis: int
    shape: tuple[int, ...]
    lines: tuple[tuple[int, ...], ...]
    method: str
    min_separation: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lines = tuple(tuple(int(i) for i in np.atleast_1d(line)) for line in self.lines)
        object.__setattr__(self, "lines", lines)
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        self.validate()

    def __len__(self) -> int:
        return len(self.lines)

    @property
    def num_candidates(self) -> int:
        return math.prod(self.shape)

    @property
    def fraction(self) -> float:
        """Selected lines over total phase-encode lines."""
        return len(self.lines) / self.num_candidates

    def as_array(self) -> np.ndarray:
        return np.asarray(self.lines, dtype=int).reshape(len(self.lines), len(self.shape))

    def validate(self) -> None:
        arr = self.as_array()
        if arr.size and (arr.min() < 0 or np.any(arr >= np.asarray(self.shape))):
            raise DomainError("pattern line index out of range")
        if len(set(self.lines)) != len(self.lines):
            raise DomainError("pattern contains duplicate lines")
        if len(arr) > 1:
            gaps = np.sqrt(((arr[:, None, :] - arr[None, :, :]) ** 2).sum(-1))
            gaps[np.diag_indices(len(arr))] = np.inf
            if gaps.min() < self.min_separation - 1e-12:
                raise DomainError(f"lines closer than the separation {self.min_separation}")

    def mask(self) -> np.ndarray:
        """Boolean mask over the centered phase-encode plane."""
        m = np.zeros(self.shape, dtype=bool)
        for line in self.lines:
            m[line] = True
        return m


def phase_shape(kshape: Sequence[int], readout_axis: int) -> tuple[int, ...]:
    return tuple(n for a, n in enumerate(kshape) if a != readout_axis)


def default_readout_axis(ndim: int) -> int:
    """Readout along k_x in 2D (lines indexed by k_y) and along k_z in 3D."""
    return 0 if ndim == 2 else ndim - 1


def line_scores(vmap: np.ndarray, readout_axis: int, center: bool = False) -> np.ndarray:
    """Sum of the variance map along the readout axis, one score per line.

    With ``center=True`` the map is first moved to the centered view, which is
    what the selection routines expect for an FFT-ordered variance map.
    """
    vmap = np.asarray(vmap, dtype=float)
    if not 0 <= readout_axis < vmap.ndim:
        raise DomainError(f"readout axis {readout_axis} invalid for a {vmap.ndim}-D map")
    if center:
        vmap = centered(vmap)
    return vmap.sum(axis=readout_axis)


def select_lines_maxvar(scores: np.ndarray, n: int, min_separation: float = 1.0,
                        readout_axis: int = 0) -> SamplingPattern:
    """Greedy descending-score selection honouring a minimum line separation.

    Ties go to the lower (row-major) index. Raises :class:`DomainError` when
    fewer than ``n`` lines fit under the separation constraint.
    """
    scores = np.asarray(scores, dtype=float)
    shape = scores.shape
    flat = scores.ravel()
    order = np.lexsort((np.arange(flat.size), -flat))
    coords = np.array(np.unravel_index(order, shape)).T
    chosen: list[np.ndarray] = []
    for c in coords:
        if len(chosen) == n:
            break
        if chosen and min_separation > 0:
            d = np.sqrt(((np.asarray(chosen) - c) ** 2).sum(-1))
            if d.min() < min_separation:
                continue
        chosen.append(c)
    if len(chosen) < n:
        achievable = _greedy_capacity(coords, min_separation)
        raise DomainError(f"cannot place {n} lines at separation {min_separation}; at most {achievable}")
    return SamplingPattern(readout_axis, shape, tuple(tuple(c) for c in chosen), "maxvar", min_separation)


def _greedy_capacity(coords: np.ndarray, min_separation: float) -> int:
    kept: list[np.ndarray] = []
    for c in coords:
        if not kept or np.sqrt(((np.asarray(kept) - c) ** 2).sum(-1)).min() >= min_separation:
            kept.append(c)
    return len(kept)


def rectilinear_pattern(shape: int | Sequence[int], n: int, readout_axis: int = 0) -> SamplingPattern:
    """Evenly strided lines: raster indices ``round(i * candidates / n)``."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    total = math.prod(shape)
    if not 0 <= n <= total:
        raise DomainError(f"requested {n} lines from {total} candidates")
    picks: list[int] = []
    for i in range(n):
        idx = int(math.floor(i * total / n + 0.5))
        if idx not in picks:
            picks.append(idx)
    lines = tuple(tuple(int(v) for v in np.unravel_index(p, shape)) for p in picks)
    return SamplingPattern(readout_axis, shape, lines, "rectilinear", 1.0, {"stride": total / n if n else 0.0})


def poisson_disk_pattern(shape: int | Sequence[int], n: int, r0: float = 1.0, beta: float = 2.0,
                         seed: int = 0, readout_axis: int = 0, max_attempts: int | None = None) -> SamplingPattern:
    """Variable-density Poisson-disk lines on the phase-encode plane.

    Darts are thrown uniformly and snapped to the integer grid; a dart is
    accepted when its distance to every accepted point is at least the larger
    of the two local radii ``r0 (1 + beta |k - k_c| / k_max)``. When more than
    ``n`` darts survive, the ``n`` closest to the centre are kept. If fewer
    survive, the pattern is returned short with ``params["shortfall"]`` set.
    """
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    if r0 < 1.0:
        raise DomainError("r0 must be at least one grid unit so snapped darts stay distinct")
    if beta < 0 or n < 0:
        raise DomainError("beta and n must be nonnegative")
    dims = np.asarray(shape, dtype=float)
    center = np.asarray([s // 2 for s in shape], dtype=float)
    k_max = float(np.sqrt(((np.maximum(center, dims - 1 - center)) ** 2).sum())) or 1.0
    rng = np.random.default_rng(seed)
    total = math.prod(shape)
    budget = max_attempts if max_attempts is not None else 30 * total

    def radius(p):
        return r0 * (1.0 + beta * np.sqrt(((p - center) ** 2).sum(-1)) / k_max)

    accepted = np.empty((0, len(shape)))
    acc_r = np.empty(0)
    misses = 0
    for _ in range(budget):
        dart = np.floor(rng.uniform(0.0, dims))
        r = radius(dart)
        if len(accepted):
            dist = np.sqrt(((accepted - dart) ** 2).sum(-1))
            if np.any(dist < np.maximum(acc_r, r)):
                misses += 1
                if misses > 10 * total:
                    break
                continue
        accepted = np.vstack([accepted, dart])
        acc_r = np.append(acc_r, r)
        misses = 0
    d_center = np.sqrt(((accepted - center) ** 2).sum(-1))
    keep = np.lexsort((np.arange(len(accepted)), d_center))[:n]
    lines = tuple(tuple(int(v) for v in accepted[i]) for i in keep)
    params = {"seed": int(seed), "r0": r0, "beta": beta, "accepted": int(len(accepted))}
    if len(lines) < n:
        params["shortfall"] = n - len(lines)
    return SamplingPattern(readout_axis, shape, lines, "poisson", min(r0, 1.0), params)


# -- mutual information reference -------------------------------------------


@dataclass(frozen=True)
class ScalarPrior:
    """One-dimensional prior for the mutual-information oracle.

    ``kind`` is ``"uniform"`` (``a``, ``b`` are the bounds) or ``"gaussian"``
    (``a`` is the mean, ``b`` the variance).
    """

    kind: str
    a: float
    b: float

    def rule(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "uniform":
            x, w = np.polynomial.legendre.leggauss(n)
            return 0.5 * (self.b - self.a) * x + 0.5 * (self.a + self.b), w / w.sum()
        if self.kind == "gaussian":
            x, w = np.polynomial.hermite_e.hermegauss(n)
            return self.a + math.sqrt(self.b) * x, w / w.sum()
        raise DomainError(f"unknown prior kind {self.kind!r}")


def mutual_information_reference(prior: ScalarPrior, forward: Callable[[np.ndarray], np.ndarray], sigma: float,
                                 n_param: int = 96, n_noise: int = 24, max_points: int = 64) -> np.ndarray:
    """Per-point mutual information between a scalar parameter and a noisy measurement.

    Evaluates ``E_z[ KL(p(mu | z) || p(mu)) ]`` with nested quadrature: an
    ``n_param`` rule over the prior, and a Gauss-Hermite rule of ``n_noise``
    points per real noise component for ``z = forward(mu) + noise``.

    Parameters
    ----------
    prior : ScalarPrior
    forward : callable
        Maps an array of parameter values ``(P,)`` to predictions ``(P, K)``,
        real or complex. Complex predictions get independent noise on both parts.
    sigma : float
        Standard deviation of each real noise component.

    Returns
    -------
    np.ndarray
        Mutual information in nats, one value per measurement point.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    mu, w = prior.rule(n_param)
    pred = np.asarray(forward(mu))
    if pred.ndim == 1:
        pred = pred[:, None]
    if pred.shape[0] != len(mu):
        raise DomainError("forward must return one row per parameter value")
    if pred.shape[1] > max_points:
        raise DomainError(f"mutual-information oracle limited to {max_points} points, got {pred.shape[1]}")
    if n_param * n_noise**2 * n_param > 5e7:
        raise DomainError("quadrature budget exceeded")
    if np.iscomplexobj(pred):
        comps = [np.stack([pred[:, k].real, pred[:, k].imag], axis=-1) for k in range(pred.shape[1])]
    else:
        comps = [pred[:, k:k + 1] for k in range(pred.shape[1])]

    e, we = np.polynomial.hermite_e.hermegauss(n_noise)
    we = we / we.sum()
    ndim = comps[0].shape[1]
    grids = np.meshgrid(*([e] * ndim), indexing="ij")
    eps = np.stack([g.ravel() for g in grids], axis=-1)  # (E, ndim)
    weps = np.prod(np.meshgrid(*([we] * ndim), indexing="ij"), axis=0).ravel()
    logw = np.log(w)

    out = np.empty(len(comps))
    for k, y in enumerate(comps):
        # z[i, e] = y[i] + sigma * eps[e]; log-likelihood against every y[j]
        z = y[:, None, :] + sigma * eps[None, :, :]
        sq = ((z[:, :, None, :] - y[None, None, :, :]) ** 2).sum(-1) / (2.0 * sigma**2)
        log_post = logw[None, None, :] - sq
        log_post -= np.logaddexp.reduce(log_post, axis=-1, keepdims=True)
        post = np.exp(log_post)
        kl = (post * (log_post - logw[None, None, :])).sum(-1)
        out[k] = (w[:, None] * weps[None, :] * kl).sum()
    return out
