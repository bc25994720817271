"""Linear unbiased minimum-variance update of the attenuation statistics.

Complex k-space samples on the selected lines are stacked into a real
vector (real and imaginary part of each sample, in turn). Ensemble
anomalies give the predicted-signal covariance in factored form
``Sigma_UU = B B^T``; the gain is applied through the low-rank identity so
no matrix of the measurement dimension is ever inverted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from mrtherm.errors import DomainError, NumericalError
from mrtherm.mrsignal import centered, uncentered
from mrtherm.sampling import SamplingPattern
from mrtherm.uq import Ensemble

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParameterStats:
    mean: np.ndarray
    covariance: np.ndarray
    clamped: bool = False

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (len(mean), len(mean)):
            raise DomainError(f"covariance shape {cov.shape} does not match mean length {len(mean)}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance).copy()

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))


@dataclass(frozen=True)
class GainOperator:
    """Gain matrix ``K`` (d x 2n) and the covariance reduction ``K S K^T``."""

    matrix: np.ndarray
    reduction: np.ndarray


def _line_block(signal: np.ndarray, pattern: SamplingPattern) -> np.ndarray:
    """Complex samples ``(lines, readout)`` from an FFT-ordered k-space array."""
    moved = np.moveaxis(centered(np.asarray(signal)), pattern.readout_axis, -1)
    if moved.shape[:-1] != pattern.shape:
        raise DomainError(f"pattern expects phase-encode extents {pattern.shape}, signal has {moved.shape[:-1]}")
    if not len(pattern):
        return np.empty((0, moved.shape[-1]), dtype=complex)
    idx = pattern.as_array()
    return moved[tuple(idx.T)]


def restrict_to_pattern(signal: np.ndarray, pattern: SamplingPattern) -> np.ndarray:
    """Stack the samples of the selected lines into a real vector.

    Lines follow pattern order, samples ascend along the (centered) readout
    axis, and each sample contributes its real part then its imaginary part.
    A leading ensemble axis is allowed: ``(M, *kshape)`` gives ``(M, 2n)``.
    """
    signal = np.asarray(signal)
    if signal.ndim == len(pattern.shape) + 2:
        return np.stack([restrict_to_pattern(s, pattern) for s in signal])
    block = _line_block(signal, pattern)
    return np.stack([block.real, block.imag], axis=-1).ravel()


def embed_from_pattern(vector: np.ndarray, pattern: SamplingPattern, kshape: tuple[int, ...]) -> np.ndarray:
    """Inverse of :func:`restrict_to_pattern`: zero-filled FFT-ordered k-space."""
    readout = kshape[pattern.readout_axis]
    pairs = np.asarray(vector, dtype=float).reshape(len(pattern), readout, 2)
    block = pairs[..., 0] + 1j * pairs[..., 1]
    moved_shape = pattern.shape + (readout,)
    moved = np.zeros(moved_shape, dtype=complex)
    if len(pattern):
        moved[tuple(pattern.as_array().T)] = block
    return uncentered(np.moveaxis(moved, -1, pattern.readout_axis))


def anomalies(ensemble: Ensemble, pattern: SamplingPattern) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scaled deviations of parameters and restricted predictions.

    Returns
    -------
    param_anomalies : np.ndarray
        ``(d, M)`` columns ``sqrt(w_q) (mu_q - mean)``.
    signal_anomalies : np.ndarray
        ``(2n, M)`` columns ``sqrt(w_q) (r_q - r_mean)``; ``B B^T = Sigma_UU``.
    predicted : np.ndarray
        ``(2n,)`` ensemble-mean restricted prediction.
    """
    w = ensemble.weights
    if abs(w.sum() - 1.0) > 1e-12:
        raise DomainError("ensemble weights must sum to one")
    r = restrict_to_pattern(ensemble.signals, pattern)
    r_mean = w @ r
    sw = np.sqrt(w)
    a = ((ensemble.params - ensemble.parameter_mean()) * sw[:, None]).T
    b = ((r - r_mean) * sw[:, None]).T
    return a, b, r_mean


def cross_covariance(ensemble: Ensemble, pattern: SamplingPattern) -> np.ndarray:
    """``Sigma_mu_z = sum_q w_q (mu_q - mean)(r_q - r_mean)^T``, shape ``(d, 2n)``."""
    a, b, _ = anomalies(ensemble, pattern)
    return a @ b.T


def kalman_gain(signal_anomalies: np.ndarray, cross: np.ndarray, noise_var) -> GainOperator:
    """``K = Sigma_mu_z (B B^T + R)^-1`` through the whitened low-rank identity.

    With ``R`` diagonal and ``C = R^{-1/2} B = U s V^T``,
    ``(B B^T + R)^{-1} = R^{-1/2} (I - U diag(s^2 / (1 + s^2)) U^T) R^{-1/2}``,
    which only needs the thin SVD of the ``2n x M`` whitened anomalies.
    """
    b = np.atleast_2d(np.asarray(signal_anomalies, dtype=float))
    cross = np.atleast_2d(np.asarray(cross, dtype=float))
    n_obs = b.shape[0]
    r = np.broadcast_to(np.asarray(noise_var, dtype=float), (n_obs,))
    if cross.shape[1] != n_obs:
        raise DomainError(f"cross covariance has {cross.shape[1]} columns, expected {n_obs}")
    if n_obs == 0:
        d = cross.shape[0]
        return GainOperator(np.zeros((d, 0)), np.zeros((d, d)))
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise DomainError("noise variances must be positive and finite")
    r_isqrt = 1.0 / np.sqrt(r)
    c = b * r_isqrt[:, None]
    u, s, _ = np.linalg.svd(c, full_matrices=False)
    shrink = s**2 / (1.0 + s**2)
    xw = cross * r_isqrt[None, :]  # Sigma_mu_z R^{-1/2}
    gain_w = xw - ((xw @ u) * shrink[None, :]) @ u.T
    gain = gain_w * r_isqrt[None, :]
    if not np.all(np.isfinite(gain)):
        raise NumericalError("gain computation produced non-finite values")
    reduction = gain @ cross.T
    reduction = 0.5 * (reduction + reduction.T)
    return GainOperator(gain, reduction)


def minimum_variance_update(prior: ParameterStats, gain: GainOperator, z: np.ndarray, predicted: np.ndarray,
                            bounds: tuple[np.ndarray, np.ndarray] | None = None) -> ParameterStats:
    """Posterior mean ``m + K (z - z_hat)`` and covariance ``P - K S K^T``.

    ``S = Sigma_UU + R`` is the innovation covariance. The posterior mean is
    clamped into ``bounds`` when given; the returned stats flag that case.
    """
    z = np.asarray(z, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if z.shape != predicted.shape or gain.matrix.shape != (len(prior.mean), len(z)):
        raise DomainError("measurement, prediction and gain shapes disagree")
    mean = prior.mean + gain.matrix @ (z - predicted)
    cov = prior.covariance - gain.reduction
    cov = 0.5 * (cov + cov.T)
    floor = -1e-8 * max(np.trace(prior.covariance), np.finfo(float).tiny)
    if np.linalg.eigvalsh(cov).min() < floor:
        raise NumericalError("posterior covariance is indefinite")
    clamped = False
    if bounds is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in bounds)
        clipped = np.clip(mean, lo, hi)
        if np.any(clipped != mean):
            log.info("posterior mean %s clamped to prior support", mean)
            clamped = True
        mean = clipped
    return ParameterStats(mean, cov, clamped)


def fuse(ensemble: Ensemble, pattern: SamplingPattern, measured: np.ndarray, noise_sigma: float,
         prior: ParameterStats | None = None, bounds=None) -> ParameterStats:
    """Full update from an FFT-ordered measured k-space array and a pattern."""
    if prior is None:
        prior = ParameterStats(ensemble.parameter_mean(), ensemble.parameter_covariance())
    if not len(pattern):
        return ParameterStats(prior.mean.copy(), prior.covariance.copy())
    a, b, predicted = anomalies(ensemble, pattern)
    gain = kalman_gain(b, a @ b.T, noise_sigma**2)
    z = restrict_to_pattern(measured, pattern)
    return minimum_variance_update(prior, gain, z, predicted, bounds)
