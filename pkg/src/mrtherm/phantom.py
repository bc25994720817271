"""Spatial domain, tissue segmentation and physical properties.

A :class:`Phantom` bundles everything the downstream solvers need: the
Cartesian grid, the per-voxel tissue labels, per-tissue thermal
properties, the laser fiber, the boundary conditions and the prior on the
per-tissue optical attenuation coefficients.

Configs are plain mappings (usually loaded from YAML). All lengths are in
meters, times in seconds, temperatures in degrees Celsius, powers in watts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from mrtherm.errors import ConfigError, DomainError

AXIS_NAMES = ("x", "y", "z")
DEFAULT_VOXEL_CAP = 2**24


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid; node ``i`` along an axis sits at ``origin + i * spacing``."""

    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]

    def __post_init__(self):
        if len(self.dims) not in (2, 3):
            raise DomainError(f"grid must have 2 or 3 axes, got {len(self.dims)}")
        if not (len(self.dims) == len(self.spacing) == len(self.origin)):
            raise DomainError("grid dims, spacing and origin lengths differ")
        if any(n < 2 for n in self.dims):
            raise DomainError(f"every grid extent must be >= 2, got {self.dims}")
        if any(not h > 0 for h in self.spacing):
            raise DomainError(f"grid spacing must be positive, got {self.spacing}")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def voxel_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + (n - 1) * h for o, n, h in zip(self.origin, self.dims, self.spacing))

    def axes(self) -> list[np.ndarray]:
        """Node coordinates along each axis."""
        return [o + h * np.arange(n) for o, n, h in zip(self.origin, self.dims, self.spacing)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def contains(self, point: Sequence[float]) -> bool:
        return all(lo - 1e-12 <= p <= hi + 1e-12 for p, lo, hi in zip(point, self.origin, self.upper))


@dataclass(frozen=True)
class Tissue:
    """Thermal properties of one tissue type (SI units, temperatures in degC)."""

    name: str
    conductivity: float
    perfusion: float
    density: float
    specific_heat: float
    blood_specific_heat: float
    arterial_temperature: float = 37.0

    def __post_init__(self):
        if self.conductivity < 0 or self.perfusion < 0 or self.blood_specific_heat < 0:
            raise DomainError(f"tissue {self.name!r}: conductivity, perfusion and c_blood must be >= 0")
        if self.density <= 0 or self.specific_heat <= 0:
            raise DomainError(f"tissue {self.name!r}: density and specific heat must be > 0")


@dataclass(frozen=True)
class LaserSpec:
    """Isotropic laser source.

    ``positions`` holds one or more emitting points; the instantaneous power is
    split evenly between them. ``power`` is a piecewise-constant schedule of
    ``(start_time, watts)`` breakpoints, switched off after ``duration``.
    """

    positions: tuple[tuple[float, ...], ...]
    power: tuple[tuple[float, float], ...]
    duration: float

    def __post_init__(self):
        if not self.positions:
            raise DomainError("laser needs at least one fiber position")
        if any(w < 0 for _, w in self.power):
            raise DomainError("laser power must be nonnegative")
        starts = [t for t, _ in self.power]
        if starts != sorted(starts):
            raise DomainError("laser power breakpoints must be increasing in time")

    def power_at(self, t: float) -> float:
        if t < 0 or t >= self.duration:
            return 0.0
        value = 0.0
        for start, watts in self.power:
            if start <= t:
                value = watts
        return value

    def mean_power(self, t0: float, t1: float) -> float:
        """Exact average of the schedule over ``[t0, t1]``."""
        if t1 <= t0:
            return self.power_at(t0)
        edges = sorted({t0, t1, *[s for s, _ in self.power if t0 < s < t1]}
                       | ({self.duration} if t0 < self.duration < t1 else set()))
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            total += self.power_at(a) * (b - a)
        return total / (t1 - t0)


@dataclass(frozen=True)
class FaceCondition:
    kind: str  # "dirichlet" | "neumann" | "robin"
    value: float = 0.0  # u_D for dirichlet, outward flux g_N for neumann
    coefficient: float = 0.0  # convection coefficient h for robin

    def __post_init__(self):
        if self.kind not in ("dirichlet", "neumann", "robin"):
            raise DomainError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "robin" and self.coefficient < 0:
            raise DomainError("robin coefficient must be >= 0")


@dataclass(frozen=True)
class BoundarySpec:
    """One condition per box face (``"x-"``, ``"x+"``, ...) plus the initial temperature.

    Robin faces exchange heat with a reservoir at the initial temperature.
    """

    faces: Mapping[str, FaceCondition]
    initial_temperature: float = 37.0

    @property
    def ambient_temperature(self) -> float:
        return self.initial_temperature


@dataclass(frozen=True)
class UniformPrior:
    """Independent uniform priors on each tissue's attenuation coefficient (1/m)."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise DomainError("prior lower/upper lengths differ")
        for lo, hi in zip(self.lower, self.upper):
            if not 0 < lo < hi:
                raise DomainError(f"prior bounds must satisfy 0 < lower < upper, got ({lo}, {hi})")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    @property
    def covariance(self) -> np.ndarray:
        width = np.asarray(self.upper) - np.asarray(self.lower)
        return np.diag(width**2 / 12.0)

    def clip(self, mu: np.ndarray) -> np.ndarray:
        return np.clip(mu, self.lower, self.upper)


@dataclass(frozen=True)
class Phantom:
    grid: Grid
    labels: np.ndarray
    tissues: tuple[Tissue, ...]
    laser: LaserSpec
    boundary: BoundarySpec
    prior: UniformPrior
    metadata: Mapping[str, Any] = field(default_factory=dict)

    @property
    def num_tissues(self) -> int:
        return len(self.tissues)

    def tissue_field(self, attribute: str) -> np.ndarray:
        """Per-voxel map of a :class:`Tissue` attribute."""
        values = np.array([getattr(t, attribute) for t in self.tissues], dtype=float)
        return values[self.labels]

    def tissue_volumes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.num_tissues)


def realize_attenuation(labels: np.ndarray, mu: Sequence[float], num_tissues: int | None = None) -> np.ndarray:
    """Assemble the piecewise-constant attenuation field from per-tissue values.

    Parameters
    ----------
    labels : np.ndarray
        Integer tissue id per voxel.
    mu : sequence of float
        Attenuation coefficient per tissue, 1/m.
    num_tissues : int, optional
        Expected number of tissues; defaults to ``len(mu)``.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1:
        raise DomainError("attenuation vector must be one-dimensional")
    d = len(mu) if num_tissues is None else num_tissues
    if len(mu) != d:
        raise DomainError(f"expected {d} attenuation values, got {len(mu)}")
    if np.any(mu <= 0):
        raise DomainError("attenuation coefficients must be positive")
    if labels.size and (labels.min() < 0 or labels.max() >= d):
        raise DomainError(f"labels must lie in [0, {d})")
    return mu[labels]


# -- config parsing ----------------------------------------------------------


def _require(cfg: Mapping, key: str, where: str):
    if not isinstance(cfg, Mapping):
        raise ConfigError(where, "expected a mapping")
    if key not in cfg:
        raise ConfigError(f"{where}.{key}" if where else key, "missing required key")
    return cfg[key]


def _floats(value, where: str, length: int | None = None) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(where, f"expected a list of numbers, got {value!r}") from None
    if length is not None and len(out) != length:
        raise ConfigError(where, f"expected {length} values, got {len(out)}")
    return out


def _number(value, where: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(where, f"expected a number, got {value!r}") from None


def _parse_grid(cfg: Mapping, voxel_cap: int) -> Grid:
    dims = _require(cfg, "dims", "grid")
    try:
        dims = tuple(int(n) for n in dims)
    except (TypeError, ValueError):
        raise ConfigError("grid.dims", "expected a list of integers") from None
    if len(dims) not in (2, 3):
        raise ConfigError("grid.dims", "grid must have 2 or 3 axes")
    spacing = cfg.get("spacing", 1e-3)
    spacing = (float(spacing),) * len(dims) if np.isscalar(spacing) else _floats(spacing, "grid.spacing", len(dims))
    origin = _floats(cfg.get("origin", [0.0] * len(dims)), "grid.origin", len(dims))
    if any(n < 2 for n in dims):
        raise ConfigError("grid.dims", "every extent must be >= 2")
    if any(h <= 0 for h in spacing):
        raise ConfigError("grid.spacing", "spacing must be positive")
    if math.prod(dims) > voxel_cap:
        raise ConfigError("grid.dims", f"voxel count {math.prod(dims)} exceeds cap {voxel_cap}")
    return Grid(dims, spacing, origin)


def _parse_tissues(items) -> tuple[Tissue, ...]:
    if not isinstance(items, Sequence) or isinstance(items, (str, bytes)) or not items:
        raise ConfigError("tissues", "expected a nonempty list")
    tissues = []
    for i, item in enumerate(items):
        where = f"tissues[{i}]"
        if not isinstance(item, Mapping):
            raise ConfigError(where, "expected a mapping")
        kwargs = {"name": str(item.get("name", f"tissue{i}"))}
        for key in ("conductivity", "perfusion", "density", "specific_heat", "blood_specific_heat"):
            kwargs[key] = _number(_require(item, key, where), f"{where}.{key}")
        if "arterial_temperature" in item:
            kwargs["arterial_temperature"] = _number(item["arterial_temperature"], f"{where}.arterial_temperature")
        try:
            tissues.append(Tissue(**kwargs))
        except DomainError as exc:
            raise ConfigError(where, str(exc)) from None
    return tuple(tissues)


def _ellipsoid_labels(grid: Grid, spec: Mapping) -> np.ndarray:
    labels = np.full(grid.dims, int(spec.get("fill", 0)), dtype=np.int64)
    coords = grid.mesh()
    for i, shape in enumerate(spec.get("ellipsoids", [])):
        where = f"labels.ellipsoids[{i}]"
        center = _floats(_require(shape, "center", where), f"{where}.center", grid.ndim)
        radii = _floats(_require(shape, "radii", where), f"{where}.radii", grid.ndim)
        inside = sum(((c - c0) / r) ** 2 for c, c0, r in zip(coords, center, radii)) <= 1.0
        labels[inside] = int(_require(shape, "label", where))
    return labels


def _parse_labels(value, grid: Grid, base_dir: Path | None) -> np.ndarray:
    if isinstance(value, np.ndarray):
        labels = value
    elif isinstance(value, Mapping) and "path" in value:
        path = Path(value["path"])
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.exists():
            raise ConfigError("labels.path", f"file not found: {path}")
        labels = np.fromfile(path, dtype="<u1")
        if labels.size != grid.size:
            raise ConfigError("labels.path", f"raw label file has {labels.size} voxels, grid has {grid.size}")
        labels = labels.reshape(grid.dims)
    elif isinstance(value, Mapping):
        labels = _ellipsoid_labels(grid, value)
    elif isinstance(value, (int, np.integer)):
        labels = np.full(grid.dims, int(value))
    else:
        try:
            labels = np.asarray(value)
        except ValueError:
            raise ConfigError("labels", "inline labels must be a rectangular nested list") from None
    if labels.shape != tuple(grid.dims):
        raise ConfigError("labels", f"label array shape {labels.shape} does not match grid {grid.dims}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise ConfigError("labels", "labels must be integers")
    return labels.astype(np.int64)


def _parse_laser(cfg: Mapping, grid: Grid) -> LaserSpec:
    if "positions" in cfg:
        raw = cfg["positions"]
        positions = tuple(_floats(p, f"laser.positions[{i}]", grid.ndim) for i, p in enumerate(raw))
    else:
        positions = (_floats(_require(cfg, "position", "laser"), "laser.position", grid.ndim),)
    for i, p in enumerate(positions):
        if not grid.contains(p):
            raise ConfigError(f"laser.positions[{i}]", f"fiber position {p} lies outside the domain")
    power = _require(cfg, "power", "laser")
    if np.isscalar(power):
        schedule = ((0.0, _number(power, "laser.power")),)
    else:
        schedule = tuple(tuple(_floats(step, f"laser.power[{i}]", 2)) for i, step in enumerate(power))
    if any(w < 0 for _, w in schedule):
        raise ConfigError("laser.power", "power must be nonnegative")
    duration = _number(cfg.get("duration", math.inf), "laser.duration")
    try:
        return LaserSpec(positions, schedule, duration)
    except DomainError as exc:
        raise ConfigError("laser", str(exc)) from None


def _parse_boundary(cfg: Mapping, grid: Grid) -> BoundarySpec:
    cfg = cfg or {}
    u0 = _number(cfg.get("initial_temperature", 37.0), "boundary.initial_temperature")
    default = cfg.get("default", {"kind": "dirichlet", "value": u0})
    given = cfg.get("faces", {}) or {}
    names = [f"{a}{s}" for a in AXIS_NAMES[: grid.ndim] for s in "-+"]
    for key in given:
        if key not in names:
            raise ConfigError(f"boundary.faces.{key}", f"unknown face; expected one of {names}")
    faces = {}
    for name in names:
        spec = given.get(name, default)
        where = f"boundary.faces.{name}"
        kind = str(_require(spec, "kind", where))
        if kind not in ("dirichlet", "neumann", "robin"):
            raise ConfigError(f"{where}.kind", f"unknown boundary kind {kind!r}")
        value = _number(spec.get("value", u0 if kind == "dirichlet" else 0.0), f"{where}.value")
        coefficient = _number(spec.get("coefficient", 0.0), f"{where}.coefficient")
        if kind == "robin" and coefficient < 0:
            raise ConfigError(f"{where}.coefficient", "must be >= 0")
        faces[name] = FaceCondition(kind, value, coefficient)
    return BoundarySpec(faces, u0)


def _parse_prior(cfg: Mapping, d: int) -> UniformPrior:
    if isinstance(cfg, Sequence):
        lower, upper = [], []
        for i, item in enumerate(cfg):
            if str(item.get("kind", "uniform")) != "uniform":
                raise ConfigError(f"prior[{i}].kind", "only uniform priors are supported")
            lower.append(_number(_require(item, "lower", f"prior[{i}]"), f"prior[{i}].lower"))
            upper.append(_number(_require(item, "upper", f"prior[{i}]"), f"prior[{i}].upper"))
    else:
        lower = _floats(_require(cfg, "lower", "prior"), "prior.lower")
        upper = _floats(_require(cfg, "upper", "prior"), "prior.upper")
    if len(lower) != d or len(upper) != d:
        raise ConfigError("prior", f"expected bounds for {d} tissues")
    try:
        return UniformPrior(tuple(lower), tuple(upper))
    except DomainError as exc:
        raise ConfigError("prior", str(exc)) from None


def build_phantom(config: Mapping, base_dir: str | Path | None = None,
                  voxel_cap: int = DEFAULT_VOXEL_CAP) -> Phantom:
    """Validate a phantom config mapping and build the :class:`Phantom`.

    Raises :class:`ConfigError` naming the offending key on schema problems
    and for label ids outside ``[0, number of tissues)``.
    """
    if not isinstance(config, Mapping):
        raise ConfigError("<root>", "phantom config must be a mapping")
    base_dir = Path(base_dir) if base_dir is not None else None
    grid = _parse_grid(_require(config, "grid", ""), voxel_cap)
    tissues = _parse_tissues(_require(config, "tissues", ""))
    labels = _parse_labels(_require(config, "labels", ""), grid, base_dir)
    d = len(tissues)
    if labels.min() < 0 or labels.max() >= d:
        bad = int(labels.max() if labels.max() >= d else labels.min())
        raise ConfigError("labels", f"label id {bad} outside [0, {d})")
    laser = _parse_laser(_require(config, "laser", ""), grid)
    boundary = _parse_boundary(config.get("boundary", {}), grid)
    prior = _parse_prior(_require(config, "prior", ""), d)
    labels.setflags(write=False)
    metadata = {k: v for k, v in config.items() if k in ("name", "description")}
    return Phantom(grid, labels, tissues, laser, boundary, prior, metadata)


def load_config(path: str | Path) -> dict:
    """Read a YAML (or JSON) document."""
    path = Path(path)
    try:
        with path.open() as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "file not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"unparsable document: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return data


def load_phantom(path: str | Path) -> Phantom:
    path = Path(path)
    return build_phantom(load_config(path), base_dir=path.parent)
