import os

import pytest
from hypothesis import HealthCheck, settings

from chemotaxis_lab.config import from_dict

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_config(**blocks):
    """Config from block overrides, e.g. ``make_config(grid={"cells": 32})``."""
    data = {
        "grid": {"dim": 1, "cells": 32, "extent": 1.0},
        "params": {"m": 2.0, "eps": 0.25, "t_final": 0.05},
        "initial": {"u0": 2.0, "v0": 3.0},
        "output": {"snapshot_count": 5},
    }
    for key, value in blocks.items():
        data.setdefault(key, {}).update(value)
    return from_dict(data)


GAUSS_U0 = {"kind": "gaussian", "amplitude": 3.0, "center": 0.5, "width": 0.1}
SMOOTH_U0 = {"kind": "cosine_perturbation", "mean": 1.0, "amplitude": 0.5, "modes": [1]}
SMOOTH_V0 = {"kind": "cosine_perturbation", "mean": 2.0, "amplitude": 0.5, "modes": [2]}
TILTED_V0 = {"kind": "cosine_perturbation", "mean": 3.0, "amplitude": 0.5, "modes": [1]}


@pytest.fixture
def cfg_factory():
    return make_config
