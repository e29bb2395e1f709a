"""Run configuration: JSON ingestion, validation, defaults and initial data."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import Grid, build_grid, integrate
from .regularization import Params, default_p, w_of_v


class ConfigError(ValueError):
    pass


# Tolerance constants, calibrated once on manufactured smooth runs
# (cosine-perturbation data, m = 2, eps = 0.25) and frozen here.
DEFAULT_C_AUDIT = 1.0
DEFAULT_C_WR = 0.01

PROFILE_KEYS = {
    "constant": {"value": None},
    "gaussian": {"amplitude": None, "center": None, "width": 0.1, "baseline": 0.0},
    "cosine_perturbation": {"mean": None, "amplitude": 0.0, "modes": [1], "seed": None},
}

BLOCK_DEFAULTS = {
    "grid": {"dim": 1, "cells": 64, "extent": 1.0},
    "params": {
        "m": 2.0,
        "eps": 0.25,
        "t_final": 1.0,
        "cfl_safety": 0.4,
        "p_diag": None,
        "dt_fixed": None,
    },
    "initial": {
        "u0": {"kind": "constant", "value": 1.0},
        "v0": {"kind": "constant", "value": 1.0},
    },
    "output": {
        "snapshot_times": None,
        "snapshot_count": 100,
        "snapshot_spacing": "uniform",
        "diagnostics_every": 1,
        "directory": "runs",
        "run_id": "run",
    },
    "audit": {
        "c_audit": DEFAULT_C_AUDIT,
        "c_wr": DEFAULT_C_WR,
        "family": "default",
        "mass_tol": 1e-12,
    },
}

GEOMETRIC_START = 1e-5  # first geometric snapshot, as a fraction of t_final

# top-level shorthand keys and the block they belong to
_ALIASES = {key: block for block, keys in BLOCK_DEFAULTS.items() for key in keys}


@dataclass
class RunConfig:
    grid: dict = field(default_factory=lambda: copy.deepcopy(BLOCK_DEFAULTS["grid"]))
    params: dict = field(default_factory=lambda: copy.deepcopy(BLOCK_DEFAULTS["params"]))
    initial: dict = field(default_factory=lambda: copy.deepcopy(BLOCK_DEFAULTS["initial"]))
    output: dict = field(default_factory=lambda: copy.deepcopy(BLOCK_DEFAULTS["output"]))
    audit: dict = field(default_factory=lambda: copy.deepcopy(BLOCK_DEFAULTS["audit"]))

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **overrides) -> "RunConfig":
        """Copy with top-level shorthand keys (``eps=...``, ``cells=...``) overridden."""
        data = self.to_dict()
        for key, value in overrides.items():
            if key in BLOCK_DEFAULTS:
                data[key].update(value)
            elif key in _ALIASES:
                data[_ALIASES[key]][key] = value
            else:
                raise ConfigError(f"unknown key {key!r}")
        return from_dict(data)

    # convenience accessors
    @property
    def run_id(self) -> str:
        return self.output["run_id"]

    def build_grid(self) -> Grid:
        return build_grid(self.grid["dim"], self.grid["cells"], self.grid["extent"])

    def snapshot_times(self) -> list[float]:
        t_final = float(self.params["t_final"])
        times = self.output["snapshot_times"]
        if times is None:
            n = int(self.output["snapshot_count"])
            if self.output["snapshot_spacing"] == "geometric":
                # clustered near t = 0, where degenerate diffusion relaxes fastest
                times = list(np.geomspace(GEOMETRIC_START * t_final, t_final, n))
            else:
                times = list(np.linspace(0.0, t_final, n + 1))
        times = sorted({0.0, t_final, *(float(t) for t in times)})
        return times


def _fill_profile(name: str, spec) -> dict:
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        spec = {"kind": "constant", "value": spec}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"initial.{name}: expected an object with a 'kind' key")
    kind = spec["kind"]
    if kind not in PROFILE_KEYS:
        raise ConfigError(f"initial.{name}.kind: unknown profile kind {kind!r}")
    allowed = PROFILE_KEYS[kind]
    out = {"kind": kind}
    for key in spec:
        if key != "kind" and key not in allowed:
            raise ConfigError(f"initial.{name}.{key}: unknown key for kind {kind!r}")
    for key, default in allowed.items():
        value = spec.get(key, default)
        if value is None and key != "seed":
            raise ConfigError(f"initial.{name}.{key}: required for kind {kind!r}")
        out[key] = copy.deepcopy(value)
    return out


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    blocks = copy.deepcopy(BLOCK_DEFAULTS)
    for key, value in data.items():
        if key in BLOCK_DEFAULTS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            for sub, subval in value.items():
                if sub not in BLOCK_DEFAULTS[key]:
                    raise ConfigError(f"{key}.{sub}: unknown key")
                blocks[key][sub] = copy.deepcopy(subval)
        elif key in _ALIASES:
            blocks[_ALIASES[key]][key] = copy.deepcopy(value)
        else:
            raise ConfigError(f"{key}: unknown key")
    for name in ("u0", "v0"):
        blocks["initial"][name] = _fill_profile(name, blocks["initial"][name])
    cfg = RunConfig(**blocks)
    validate(cfg)
    return cfg


def parse_config(text: str | bytes) -> RunConfig:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    return from_dict(data)


def emit_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        return parse_config(fh.read())


def _number(block: dict, key: str, where: str) -> float:
    value = block[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise ConfigError(f"{where}.{key}: expected a finite number, got {value!r}")
    return float(value)


def validate(cfg: RunConfig) -> None:
    g = cfg.grid
    dim = g["dim"]
    if dim not in (1, 2):
        raise ConfigError(f"grid.dim: must be 1 or 2, got {dim!r}")
    if not isinstance(g["cells"], int) or g["cells"] < 4:
        raise ConfigError(f"grid.cells: must be an integer >= 4, got {g['cells']!r}")
    if _number(g, "extent", "grid") <= 0:
        raise ConfigError("grid.extent: must be positive")

    p = cfg.params
    if _number(p, "m", "params") <= 1:
        raise ConfigError("params.m: m must exceed 1")
    eps = _number(p, "eps", "params")
    if not 0 < eps < 1:
        raise ConfigError("params.eps: eps must lie in (0, 1)")
    if _number(p, "t_final", "params") <= 0:
        raise ConfigError("params.t_final: must be positive")
    if not 0 < _number(p, "cfl_safety", "params") < 1:
        raise ConfigError("params.cfl_safety: must lie in (0, 1)")
    if p["p_diag"] is not None and _number(p, "p_diag", "params") < 1:
        raise ConfigError("params.p_diag: must be >= 1")
    if p["dt_fixed"] is not None and _number(p, "dt_fixed", "params") <= 0:
        raise ConfigError("params.dt_fixed: must be positive")

    o = cfg.output
    if o["snapshot_times"] is not None:
        ts = o["snapshot_times"]
        if not isinstance(ts, list) or any(
            isinstance(t, bool) or not isinstance(t, (int, float)) or not 0 <= t <= p["t_final"] for t in ts
        ):
            raise ConfigError("output.snapshot_times: must be a list of times in [0, t_final]")
    if not isinstance(o["snapshot_count"], int) or o["snapshot_count"] < 1:
        raise ConfigError("output.snapshot_count: must be a positive integer")
    if o["snapshot_spacing"] not in ("uniform", "geometric"):
        raise ConfigError("output.snapshot_spacing: must be 'uniform' or 'geometric'")
    if not isinstance(o["diagnostics_every"], int) or o["diagnostics_every"] < 1:
        raise ConfigError("output.diagnostics_every: must be a positive integer")
    if not isinstance(o["run_id"], str) or not o["run_id"]:
        raise ConfigError("output.run_id: must be a non-empty string")

    a = cfg.audit
    for key in ("c_audit", "c_wr", "mass_tol"):
        if _number(a, key, "audit") <= 0:
            raise ConfigError(f"audit.{key}: must be positive")
    if a["family"] != "default":
        raise ConfigError(f"audit.family: only 'default' is available, got {a['family']!r}")

    grid = cfg.build_grid()
    u0, v0 = initial_fields(cfg, grid)
    if np.any(u0 < 0):
        raise ConfigError("initial.u0: u0 must be non-negative")
    if not np.any(u0 > 0):
        raise ConfigError("initial.u0: u0 must not vanish identically (u0 ≢ 0)")
    if np.any(v0 <= 0):
        raise ConfigError("initial.v0: v0 must be strictly positive")


def sample_profile(spec: dict, grid: Grid) -> np.ndarray:
    xs = grid.centers()
    kind = spec["kind"]
    if kind == "constant":
        return np.full(grid.shape, float(spec["value"]))
    if kind == "gaussian":
        center = spec["center"]
        if isinstance(center, (int, float)):
            center = [center] * grid.dim
        if len(center) != grid.dim:
            raise ConfigError("gaussian.center: needs one coordinate per axis")
        r2 = sum((x - c) ** 2 for x, c in zip(xs, center))
        return spec["baseline"] + spec["amplitude"] * np.exp(-r2 / (2.0 * spec["width"] ** 2))
    if kind == "cosine_perturbation":
        modes = [[k] * grid.dim if isinstance(k, int) else list(k) for k in spec["modes"]]
        coeffs = np.ones(len(modes))
        if spec["seed"] is not None:
            coeffs = np.random.default_rng(spec["seed"]).uniform(-1.0, 1.0, len(modes))
        out = np.full(grid.shape, float(spec["mean"]))
        for c, k in zip(coeffs, modes):
            if len(k) != grid.dim:
                raise ConfigError("cosine_perturbation.modes: needs one index per axis")
            mode = np.ones(grid.shape)
            for x, kk in zip(xs, k):
                mode = mode * np.cos(kk * np.pi * x / grid.extent)
            out = out + spec["amplitude"] * c * mode
        return out
    raise ConfigError(f"unknown profile kind {kind!r}")


def initial_fields(cfg: RunConfig, grid: Grid | None = None) -> tuple[np.ndarray, np.ndarray]:
    grid = grid or cfg.build_grid()
    return sample_profile(cfg.initial["u0"], grid), sample_profile(cfg.initial["v0"], grid)


def make_params(cfg: RunConfig, grid: Grid, u0: np.ndarray, v0: np.ndarray) -> Params:
    p = cfg.params
    return Params(
        m=float(p["m"]),
        eps=float(p["eps"]),
        dim=grid.dim,
        v0_max=float(np.max(v0)),
        lam=integrate(u0, grid),
        t_final=float(p["t_final"]),
        cfl_safety=float(p["cfl_safety"]),
        p_diag=float(p["p_diag"]) if p["p_diag"] is not None else default_p(grid.dim),
        int_w0=integrate(w_of_v(v0, float(np.max(v0))), grid),
        v0_min=float(np.min(v0)),
        u0_max=float(np.max(u0)),
    )
