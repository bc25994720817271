"""Spoiled gradient-echo signal model, k-space forward operator and noise.

Temperature enters only through the proton resonance frequency shift: the
pixel phase rotates by ``-2 pi gamma alpha B0 TE du`` for a temperature
change ``du``. Optionally ``T1`` drifts linearly with temperature, which
changes the steady-state magnetization.

k-space arrays are stored in natural FFT order (zero frequency at index 0);
:func:`centered` gives the view with zero frequency at ``n // 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mrtherm.errors import DomainError

ORACLE_MAX_VOXELS = 2**12


@dataclass(frozen=True)
class MrProtocol:
    """Acquisition and tissue relaxation parameters.

    Attributes
    ----------
    flip_angle : float
        rad.
    tr, te : float
        Repetition and echo time, s.
    gamma : float
        Gyromagnetic ratio, Hz/T (42.58e6 for water protons).
    alpha : float
        PRF thermal coefficient, dimensionless per degC (ppm value * 1e-6).
    b0 : float
        Field strength, T.
    t1 : tuple of float
        Baseline T1 per tissue, s.
    t2star : tuple of float
        T2* per tissue, s.
    t1_slope : tuple of float
        Relative T1 change per degC per tissue; ``T1 = T1_0 (1 + slope du)``.
    m0 : float or np.ndarray
        Equilibrium magnetization, scalar or per voxel.
    off_resonance : float or np.ndarray
        Off-resonance angular frequency, rad/s, scalar or per voxel.
    """

    flip_angle: float
    tr: float
    te: float
    gamma: float
    alpha: float
    b0: float
    t1: tuple[float, ...]
    t2star: tuple[float, ...]
    t1_slope: tuple[float, ...] = ()
    m0: float | np.ndarray = 1.0
    off_resonance: float | np.ndarray = 0.0

    def __post_init__(self):
        if not (self.tr > 0 and self.te > 0):
            raise DomainError("TR and TE must be positive")
        if not 0 <= self.flip_angle <= math.pi:
            raise DomainError("flip angle must lie in [0, pi]")
        if len(self.t1) != len(self.t2star):
            raise DomainError("t1 and t2star need one entry per tissue")
        if any(v <= 0 for v in self.t1) or any(v <= 0 for v in self.t2star):
            raise DomainError("relaxation times must be positive")
        if not self.t1_slope:
            object.__setattr__(self, "t1_slope", (0.0,) * len(self.t1))
        if len(self.t1_slope) != len(self.t1):
            raise DomainError("t1_slope needs one entry per tissue")

    @property
    def phase_per_degree(self) -> float:
        """PRF phase advance per degC, rad (sign included)."""
        return 2.0 * math.pi * self.gamma * self.alpha * self.b0 * self.te

    @classmethod
    def from_config(cls, cfg: dict, num_tissues: int) -> "MrProtocol":
        """Build from a config mapping with ``gamma_mhz_per_t`` and ``alpha_ppm`` style units.

        Recognised keys: ``flip_angle_deg`` or ``flip_angle`` (rad), ``tr``,
        ``te`` (s), ``gamma_mhz_per_t``, ``alpha_ppm_per_c``, ``b0``, ``t1``,
        ``t2star`` (s, scalar or per tissue), ``t1_slope`` (1/degC).
        """
        from mrtherm.errors import ConfigError

        def per_tissue(key, default=None):
            value = cfg.get(key, default)
            if value is None:
                raise ConfigError(f"protocol.{key}", "missing required key")
            if np.isscalar(value):
                return (float(value),) * num_tissues
            value = tuple(float(v) for v in value)
            if len(value) != num_tissues:
                raise ConfigError(f"protocol.{key}", f"expected {num_tissues} values")
            return value

        try:
            if "flip_angle_deg" in cfg:
                flip = math.radians(float(cfg["flip_angle_deg"]))
            else:
                flip = float(cfg["flip_angle"])
            return cls(
                flip_angle=flip,
                tr=float(cfg["tr"]),
                te=float(cfg["te"]),
                gamma=float(cfg.get("gamma_mhz_per_t", 42.58)) * 1e6,
                alpha=float(cfg.get("alpha_ppm_per_c", -0.0102)) * 1e-6,
                b0=float(cfg["b0"]),
                t1=per_tissue("t1"),
                t2star=per_tissue("t2star"),
                t1_slope=per_tissue("t1_slope", 0.0),
                m0=float(cfg.get("m0", 1.0)),
                off_resonance=float(cfg.get("off_resonance", 0.0)),
            )
        except KeyError as exc:
            raise ConfigError(f"protocol.{exc.args[0]}", "missing required key") from None
        except DomainError as exc:
            raise ConfigError("protocol", str(exc)) from None


def magnetization(protocol: MrProtocol, t1_field) -> np.ndarray:
    """Steady-state transverse magnetization of a spoiled gradient echo."""
    e1 = np.exp(-protocol.tr / np.asarray(t1_field, dtype=float))
    theta = protocol.flip_angle
    return protocol.m0 * math.sin(theta) * (1.0 - e1) / (1.0 - math.cos(theta) * e1)


def complex_image(u: np.ndarray, u_ref: np.ndarray, protocol: MrProtocol, labels: np.ndarray) -> np.ndarray:
    """Complex image for temperature ``u`` relative to the baseline ``u_ref``."""
    if u.shape != u_ref.shape or u.shape != labels.shape:
        raise DomainError("temperature, baseline and labels must share a grid")
    du = u - u_ref
    t1 = np.asarray(protocol.t1)[labels] * (1.0 + np.asarray(protocol.t1_slope)[labels] * du)
    t2s = np.asarray(protocol.t2star)[labels]
    magnitude = magnetization(protocol, t1) * np.exp(-protocol.te / t2s)
    phase = protocol.phase_per_degree * du + protocol.te * np.asarray(protocol.off_resonance)
    return magnitude * np.exp(-1j * phase)


def kspace_forward(img: np.ndarray, voxel_volume: float = 1.0) -> np.ndarray:
    """Riemann-sum Fourier transform ``sum_x img(x) exp(-2 pi i k.x) dV`` in FFT order."""
    return np.fft.fftn(img) * voxel_volume


def kspace_inverse(signal: np.ndarray, voxel_volume: float = 1.0) -> np.ndarray:
    return np.fft.ifftn(signal) / voxel_volume


def kspace_forward_oracle(img: np.ndarray, voxel_volume: float = 1.0) -> np.ndarray:
    """Direct O(N^2) evaluation of the same sum, for verification only."""
    img = np.asarray(img, dtype=complex)
    if img.size > ORACLE_MAX_VOXELS:
        raise DomainError(f"oracle limited to {ORACLE_MAX_VOXELS} voxels, got {img.size}")
    dims = img.shape
    idx = np.array(list(np.ndindex(*dims)), dtype=float)  # (N, ndim), row-major
    frac = idx / np.asarray(dims, dtype=float)
    flat = img.ravel()
    out = np.empty(len(idx), dtype=complex)
    for start in range(0, len(idx), 256):
        k = idx[start:start + 256]
        out[start:start + 256] = np.exp(-2j * np.pi * (k @ frac.T)) @ flat
    return out.reshape(dims) * voxel_volume


def centered(signal: np.ndarray) -> np.ndarray:
    """View with the zero frequency moved to index ``n // 2`` on every axis."""
    return np.fft.fftshift(signal)


def uncentered(signal: np.ndarray) -> np.ndarray:
    return np.fft.ifftshift(signal)


def kspace_frequencies(dims: Sequence[int], spacing: Sequence[float]) -> list[np.ndarray]:
    """Physical spatial frequency (cycles/m) of each FFT-ordered index, per axis."""
    return [np.fft.fftfreq(n, d=h) for n, h in zip(dims, spacing)]


@dataclass(frozen=True)
class NoiseModel:
    """Complex white Gaussian noise.

    ``sigma`` is the standard deviation of each quadrature component. Use
    :meth:`from_snr` to derive it from the peak (zero-frequency) signal.
    """

    sigma: float
    seed: int = 0
    snr: float = math.inf

    @classmethod
    def from_snr(cls, reference: np.ndarray, snr: float, seed: int = 0) -> "NoiseModel":
        if not snr > 0:
            raise DomainError("snr must be positive")
        peak = abs(np.asarray(reference).flat[0])
        sigma = 0.0 if math.isinf(snr) else peak / (snr * math.sqrt(2.0))
        return cls(sigma=sigma, seed=seed, snr=snr)


def add_noise(signal: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """Seeded independent draws of ``N(0, sigma^2)`` on real and imaginary parts."""
    if noise.sigma == 0:
        return np.array(signal, dtype=complex)
    rng = np.random.default_rng(noise.seed)
    draws = rng.standard_normal((2,) + np.shape(signal))
    return signal + noise.sigma * (draws[0] + 1j * draws[1])


def signal_from_temperature(u: np.ndarray, u_ref: np.ndarray, protocol: MrProtocol, labels: np.ndarray,
                            voxel_volume: float) -> np.ndarray:
    """Convenience composition: temperature field to noiseless k-space."""
    return kspace_forward(complex_image(u, u_ref, protocol, labels), voxel_volume)
