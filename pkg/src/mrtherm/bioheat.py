"""Explicit finite-difference solver for the Pennes bioheat equation.

The grid is vertex centred: boundary nodes sit on the faces of the box.
Interior nodes use the usual 5-point (2D) or 7-point (3D) stencil with
harmonic-mean face conductivities; boundary nodes own a half cell, so
Neumann and Robin fluxes enter through a half-width control volume and
Dirichlet nodes are pinned after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from mrtherm.errors import DomainError, SolverDivergence
from mrtherm.phantom import AXIS_NAMES, Grid, LaserSpec, Phantom, realize_attenuation

DIVERGENCE_LIMIT = 1.0e4


@dataclass(frozen=True)
class SolverSettings:
    """Time stepping controls.

    Attributes
    ----------
    dt : float
        Largest allowed step, s. Each interval between output times is split
        into equal steps no longer than this.
    output_times : tuple of float
        Increasing times (s) at which the field is stored.
    distance_clamp : float
        Lower bound on the source distance, m. The effective clamp is never
        below half the smallest grid spacing.
    """

    dt: float
    output_times: tuple[float, ...]
    distance_clamp: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        times = tuple(float(t) for t in self.output_times)
        if not times or any(t < 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
            raise DomainError("output_times must be nonnegative and strictly increasing")
        object.__setattr__(self, "output_times", times)


@dataclass(frozen=True)
class TemperatureHistory:
    times: tuple[float, ...]
    fields: np.ndarray  # (len(times), *grid.dims), degC

    def at(self, t: float) -> np.ndarray:
        for i, ti in enumerate(self.times):
            if math.isclose(ti, t, rel_tol=0, abs_tol=1e-9):
                return self.fields[i]
        raise DomainError(f"time {t} not among stored output times {self.times}")


def source_shape(grid: Grid, laser: LaserSpec, mu_field: np.ndarray, distance_clamp: float = 0.0) -> np.ndarray:
    """Spatial part of the laser source for 1 W of total power, W/m^3."""
    clamp = max(distance_clamp, 0.5 * min(grid.spacing))
    coords = grid.mesh()
    shape = np.zeros(grid.dims)
    share = 1.0 / len(laser.positions)
    for x0 in laser.positions:
        r = np.sqrt(sum((c - p) ** 2 for c, p in zip(coords, x0)))
        r = np.maximum(r, clamp)
        shape += share * mu_field**2 * np.exp(-mu_field * r) / (4.0 * np.pi * r)
    return shape


def laser_source(grid: Grid, laser: LaserSpec, mu_field: np.ndarray, t: float,
                 distance_clamp: float = 0.0) -> np.ndarray:
    """Volumetric laser heating ``P(t) mu^2 exp(-mu r) / (4 pi r)`` at time ``t``."""
    if np.any(np.asarray(mu_field) <= 0):
        raise DomainError("attenuation must be positive")
    power = laser.power_at(t)
    if power == 0.0:
        return np.zeros(grid.dims)
    return power * source_shape(grid, laser, mu_field, distance_clamp)


def _robin_term(phantom: Phantom) -> float:
    worst = 0.0
    for a in range(phantom.grid.ndim):
        for side in "-+":
            face = phantom.boundary.faces[f"{AXIS_NAMES[a]}{side}"]
            if face.kind == "robin":
                worst = max(worst, 2.0 * face.coefficient / phantom.grid.spacing[a])
    return worst


def stable_timestep(phantom: Phantom) -> float:
    """Largest explicit-Euler step that keeps the discrete operator stable.

    ``min over tissues of rho c / (2 k sum(1/h^2) + w c_b)``, with convective
    faces adding ``2 h_conv / h`` to the denominator. Returns ``inf`` when the
    operator has no diffusion, perfusion or convection at all.
    """
    inv_h2 = sum(1.0 / h**2 for h in phantom.grid.spacing)
    robin = _robin_term(phantom)
    best = math.inf
    for t in phantom.tissues:
        rate = 2.0 * t.conductivity * inv_h2 + t.perfusion * t.blood_specific_heat + robin
        if rate > 0:
            best = min(best, t.density * t.specific_heat / rate)
    return best


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    total = a + b
    out = np.zeros_like(total)
    np.divide(2.0 * a * b, total, out=out, where=total > 0)
    return out


def _along(axis: int, ndim: int, index) -> tuple:
    sl = [slice(None)] * ndim
    sl[axis] = index
    return tuple(sl)


class _Operator:
    """Precomputed stencil data for one phantom."""

    def __init__(self, phantom: Phantom):
        grid = phantom.grid
        nd = grid.ndim
        self.grid = grid
        self.rho_c = phantom.tissue_field("density") * phantom.tissue_field("specific_heat")
        self.perf = phantom.tissue_field("perfusion") * phantom.tissue_field("blood_specific_heat")
        self.perf_ua = self.perf * phantom.tissue_field("arterial_temperature")
        k = phantom.tissue_field("conductivity")
        self.has_diffusion = bool(np.any(k > 0))
        self.face_k = []
        self.inv_width = []
        for a in range(nd):
            h = grid.spacing[a]
            lo = k[_along(a, nd, slice(None, -1))]
            hi = k[_along(a, nd, slice(1, None))]
            self.face_k.append(_harmonic(lo, hi) / h)
            shape = [1] * nd
            shape[a] = grid.dims[a]
            w = np.full(grid.dims[a], 1.0 / h)
            w[0] = w[-1] = 2.0 / h
            self.inv_width.append(w.reshape(shape))
        self.faces = []
        self.dirichlet_mask = np.zeros(grid.dims, dtype=bool)
        self.dirichlet_value = np.zeros(grid.dims)
        u_inf = phantom.boundary.ambient_temperature
        for a in range(nd):
            for side, index in (("-", 0), ("+", -1)):
                face = phantom.boundary.faces[f"{AXIS_NAMES[a]}{side}"]
                sl = _along(a, nd, index)
                if face.kind == "dirichlet":
                    self.dirichlet_mask[sl] = True
                    self.dirichlet_value[sl] = face.value
                else:
                    self.faces.append((a, sl, face, u_inf))
        self.has_flux_faces = any(f.kind == "robin" or f.value != 0 for _, _, f, _ in self.faces)

    def divergence(self, u: np.ndarray) -> np.ndarray:
        """Discrete div(k grad u) minus outward boundary fluxes."""
        nd = u.ndim
        div = np.zeros_like(u)
        if self.has_diffusion:
            for a in range(nd):
                flux = self.face_k[a] * np.diff(u, axis=a)
                part = np.zeros_like(u)
                part[_along(a, nd, slice(None, -1))] += flux
                part[_along(a, nd, slice(1, None))] -= flux
                div += part * self.inv_width[a]
        if self.has_flux_faces:
            for a, sl, face, u_inf in self.faces:
                width = 2.0 / self.grid.spacing[a]
                if face.kind == "neumann":
                    div[sl] -= face.value * width
                else:
                    div[sl] -= face.coefficient * (u[sl] - u_inf) * width
        return div


def initial_field(phantom: Phantom) -> np.ndarray:
    """Uniform initial temperature with Dirichlet faces pinned: the pre-heating state."""
    op = _Operator(phantom)
    u = np.full(phantom.grid.dims, float(phantom.boundary.initial_temperature))
    u[op.dirichlet_mask] = op.dirichlet_value[op.dirichlet_mask]
    return u


def solve_pennes(phantom: Phantom, mu: Sequence[float], settings: SolverSettings,
                 forcing: Callable[[float], np.ndarray] | None = None,
                 initial: np.ndarray | None = None) -> TemperatureHistory:
    """Integrate the bioheat equation with explicit Euler steps.

    Parameters
    ----------
    phantom : Phantom
    mu : sequence of float
        Attenuation coefficient per tissue, 1/m.
    settings : SolverSettings
    forcing : callable, optional
        Extra volumetric source ``f(t)`` in W/m^3, evaluated at the start of
        each step. Used for manufactured solutions.
    initial : np.ndarray, optional
        Initial field; defaults to the uniform initial temperature.

    Returns
    -------
    TemperatureHistory
        Fields at ``settings.output_times``.
    """
    dt_max = stable_timestep(phantom)
    if settings.dt > dt_max * (1 + 1e-12):
        raise DomainError(f"dt={settings.dt} exceeds the stability bound {dt_max}")
    op = _Operator(phantom)
    mu_field = realize_attenuation(phantom.labels, mu, phantom.num_tissues)
    shape = source_shape(phantom.grid, phantom.laser, mu_field, settings.distance_clamp)

    if initial is None:
        u = np.full(phantom.grid.dims, float(phantom.boundary.initial_temperature))
    else:
        u = np.array(initial, dtype=float)
    u[op.dirichlet_mask] = op.dirichlet_value[op.dirichlet_mask]
    inv_rho_c = 1.0 / op.rho_c

    out = []
    t = 0.0
    for t_out in settings.output_times:
        span = t_out - t
        steps = max(1, math.ceil(span / settings.dt - 1e-9)) if span > 0 else 0
        for i in range(steps):
            t0 = t + span * i / steps
            t1 = t + span * (i + 1) / steps
            h = t1 - t0
            rhs = op.divergence(u) - op.perf * u + op.perf_ua
            power = phantom.laser.mean_power(t0, t1)
            if power:
                rhs += power * shape
            if forcing is not None:
                rhs += forcing(t0)
            u = u + h * inv_rho_c * rhs
            u[op.dirichlet_mask] = op.dirichlet_value[op.dirichlet_mask]
        t = t_out
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > DIVERGENCE_LIMIT:
            raise SolverDivergence(f"temperature left [-{DIVERGENCE_LIMIT:g}, {DIVERGENCE_LIMIT:g}] degC by t={t}")
        out.append(u.copy())
    return TemperatureHistory(settings.output_times, np.stack(out))
