import copy

import numpy as np
import pytest

from mrtherm.phantom import build_phantom

BRAIN = {
    "conductivity": 0.527,
    "perfusion": 9.0,
    "density": 1045.0,
    "specific_heat": 3600.0,
    "blood_specific_heat": 3840.0,
}


def small_config(dims=(12, 12), h=1e-3, tissues=1, power=5.0, duration=20.0, boundary=None, labels=None):
    """Tiny phantom config used across tests."""
    center = [(n - 1) * h / 2 for n in dims]
    if labels is None:
        labels = 0 if tissues == 1 else (np.arange(int(np.prod(dims))) % tissues).reshape(dims)
    return {
        "grid": {"dims": list(dims), "spacing": h},
        "tissues": [dict(BRAIN, name=f"t{i}") for i in range(tissues)],
        "labels": labels,
        "laser": {"position": center, "power": power, "duration": duration},
        "boundary": boundary or {"initial_temperature": 37.0},
        "prior": {"lower": [100.0] * tissues, "upper": [400.0] * tissues},
    }


@pytest.fixture
def small_phantom():
    return build_phantom(small_config())


@pytest.fixture
def config_factory():
    return lambda **kw: copy.deepcopy(small_config(**kw))


PROTOCOL = {"flip_angle_deg": 30.0, "tr": 0.5, "te": 0.02, "b0": 1.5, "t1": 1.0, "t2star": 0.05}


def tiny_experiment(**kw):
    """Mapping for a fast single-tissue 2D experiment (16 x 16 grid)."""
    cfg = {
        "name": "tiny",
        "phantom": small_config(dims=(16, 16), power=8.0),
        "protocol": dict(PROTOCOL),
        "true_mu": [310.0],
        "fusion_time": 20.0,
        "lines": [0, 4, 8],
        "seeds": 2,
        "snr": 50,
        "quadrature": {"nodes_per_dim": 5},
    }
    cfg.update(kw)
    return cfg
