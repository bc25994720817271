"""Built-in synthetic phantoms and experiment settings.

``volumetric``: 32^3 brain-like block with CSF, grey matter, white matter
and a tumor around the fiber, four uncertain attenuations.
``planar``: 64 x 64 single-tissue slice, one uncertain attenuation.
``agar``: small 3-D agar block at room temperature, no perfusion.

Each preset is a plain mapping with ``phantom``, ``protocol`` and
experiment keys, the same layout a YAML experiment config uses.
"""

from __future__ import annotations

import copy

BRAIN_TISSUE = {
    "conductivity": 0.527,
    "perfusion": 9.0,
    "density": 1045.0,
    "specific_heat": 3600.0,
    "blood_specific_heat": 3840.0,
    "arterial_temperature": 37.0,
}

AGAR_TISSUE = {
    "conductivity": 0.6,
    "perfusion": 0.0,
    "density": 1000.0,
    "specific_heat": 3900.0,
    "blood_specific_heat": 0.0,
    "arterial_temperature": 19.0,
}


def _fiber(center, axis: int, length: float, count: int) -> list[list[float]]:
    if count == 1:
        return [list(center)]
    pts = []
    for i in range(count):
        p = list(center)
        p[axis] += length * (i / (count - 1) - 0.5)
        pts.append(p)
    return pts


def volumetric() -> dict:
    n, h = 32, 1.0e-3
    mid = (n - 1) * h / 2
    center = [mid, mid, mid]
    return {
        "name": "volumetric",
        "phantom": {
            "name": "volumetric",
            "grid": {"dims": [n, n, n], "spacing": [h, h, h]},
            "tissues": [
                dict(BRAIN_TISSUE, name="csf"),
                dict(BRAIN_TISSUE, name="grey"),
                dict(BRAIN_TISSUE, name="white"),
                dict(BRAIN_TISSUE, name="tumor"),
            ],
            "labels": {
                "fill": 1,
                "ellipsoids": [
                    {"label": 2, "center": [mid, mid, mid], "radii": [0.8 * mid, 0.9 * mid, 1.2 * mid]},
                    {"label": 0, "center": [0.55 * mid, 1.45 * mid, mid], "radii": [0.2 * mid, 0.25 * mid, 0.7 * mid]},
                    {"label": 3, "center": center, "radii": [6e-3, 6e-3, 8e-3]},
                ],
            },
            "laser": {"positions": _fiber(center, 2, 10e-3, 5), "power": 11.5, "duration": 90.0},
            "boundary": {"initial_temperature": 37.0},
            "prior": {"lower": [10.0, 10.0, 10.0, 10.0], "upper": [300.0, 400.0, 400.0, 400.0]},
        },
        "protocol": {
            "flip_angle": 1.0471975511965976,
            "tr": 0.544,
            "te": 0.025,
            "gamma_mhz_per_t": 42.58,
            "alpha_ppm_per_c": -0.0102,
            "b0": 1.5,
            "t1": [4.31, 1.035, 0.63, 0.8],
            "t2star": [0.010, 0.070, 0.100, 0.080],
        },
        "true_mu": [111.39, 218.75, 383.01, 385.96],
        "fusion_time": 90.0,
        "snr": 50.0,
        "quadrature": {"nodes_per_dim": 3},
        "methods": ["maxvar", "rectilinear", "poisson"],
        "lines": [0, 30, 50, 80, 100],
        "seeds": 20,
        "poisson": {"r0": 1.0, "beta": 2.0},
    }


def planar() -> dict:
    n, h = 64, 1.0e-3
    mid = (n - 1) * h / 2
    center = [mid, mid]
    return {
        "name": "planar",
        "phantom": {
            "name": "planar",
            "grid": {"dims": [n, n], "spacing": [h, h]},
            "tissues": [dict(BRAIN_TISSUE, name="brain")],
            "labels": 0,
            "laser": {"positions": _fiber(center, 1, 8e-3, 5), "power": 11.85, "duration": 94.0},
            "boundary": {"initial_temperature": 37.0},
            "prior": {"lower": [100.0], "upper": [400.0]},
        },
        "protocol": {
            "flip_angle": 0.5235987755982988,
            "tr": 0.038,
            "te": 0.020,
            "gamma_mhz_per_t": 42.58,
            "alpha_ppm_per_c": -0.0102,
            "b0": 1.5,
            "t1": 1.05,
            "t2star": 0.070,
            "t1_slope": 0.01,
        },
        "true_mu": [180.0],
        "fusion_time": 94.0,
        "snr": 25.0,
        "quadrature": {"nodes_per_dim": 15},
        "methods": ["maxvar", "rectilinear", "poisson"],
        "lines": [0, 5, 10, 20, 30, 50],
        "seeds": 3,
        "poisson": {"r0": 1.0, "beta": 2.0},
    }


def agar() -> dict:
    dims, h = [24, 24, 12], [1.0e-3, 1.0e-3, 2.0e-3]
    center = [(n - 1) * s / 2 for n, s in zip(dims, h)]
    return {
        "name": "agar",
        "phantom": {
            "name": "agar",
            "grid": {"dims": dims, "spacing": h},
            "tissues": [dict(AGAR_TISSUE, name="agar")],
            "labels": 0,
            "laser": {"positions": _fiber(center, 2, 8e-3, 5), "power": 1.0, "duration": 600.0},
            "boundary": {"initial_temperature": 19.0},
            "prior": {"lower": [1.0], "upper": [200.0]},
        },
        "protocol": {
            "flip_angle_deg": 5.0,
            "tr": 0.005,
            "te": 0.001676,
            "gamma_mhz_per_t": 42.58,
            "alpha_ppm_per_c": -0.0102,
            "b0": 3.0,
            "t1": 2.56,
            "t2star": 0.030,
            "t1_slope": 0.1 / 2.56,
        },
        "true_mu": [120.0],
        "fusion_time": 600.0,
        "snr": 25.0,
        "quadrature": {"nodes_per_dim": 11},
        "methods": ["maxvar", "rectilinear", "poisson"],
        "lines": [0, 5, 10, 30, 50, 75, 100],
        "seeds": 3,
        "poisson": {"r0": 1.0, "beta": 2.0},
    }


PRESETS = {"volumetric": volumetric, "planar": planar, "agar": agar}


def get(name: str) -> dict:
    try:
        return copy.deepcopy(PRESETS[name]())
    except KeyError:
        from mrtherm.errors import ConfigError

        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
