"""Per-step estimate ledger: masses, log-signal entropy, dissipation integrals,
L^p control of ``(u+eps)^(m-1)`` and finite-basis time-derivative pairings.

Time integrals are accumulated by the trapezoid rule between consecutive
records, so calling :func:`record` once per step gives step-level accuracy.
"""
from __future__ import annotations

import functools
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .grid import Grid, State
from .regularization import Params

N_BASIS = 8
_BASIS_2D = ((1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2), (2, 2))


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    mass_u: float
    int_w: float
    grad_w_sq: float
    cum_grad_w_sq: float
    grad_um1_sq: float
    cum_grad_um1_sq: float
    lp_um1: float
    cum_lp_um1: float
    v_min: float
    v_max: float
    pairing_values: tuple
    dual_pairings: tuple


def cosine_basis(grid: Grid, modes) -> np.ndarray:
    """Stack of cosine modes ``prod_i cos(k_i pi x_i / L)`` sampled at cell centres."""
    xs = grid.centers()
    out = []
    for k in modes:
        k = (k,) if np.ndim(k) == 0 else tuple(k)
        psi = np.ones(grid.shape)
        for x, kk in zip(xs, k):
            psi = psi * np.cos(kk * np.pi * x / grid.extent)
        out.append(psi)
    return np.array(out)


@functools.lru_cache(maxsize=16)
def default_basis(grid: Grid) -> np.ndarray:
    modes = range(1, N_BASIS + 1) if grid.dim == 1 else _BASIS_2D
    basis = cosine_basis(grid, modes)
    basis.setflags(write=False)
    return basis


def _basis3(basis: np.ndarray, grid: Grid) -> np.ndarray:
    return np.ascontiguousarray(basis.reshape((basis.shape[0],) + grid.shape3))


def _instant(state: State, grid: Grid, params: Params, basis: np.ndarray):
    sums = _kernels.diagnostic_sums(
        state.u.reshape(grid.shape3),
        state.v.reshape(grid.shape3),
        params.v0_max,
        params.m,
        params.eps,
        params.p_diag,
        grid.h,
        _basis3(basis, grid),
    )
    su, sw, gw, gU, sup, vmin, vmax, pair = sums
    vol = grid.cell_volume
    return {
        "mass_u": su * vol,
        "int_w": sw * vol,
        "grad_w_sq": gw * vol,
        "grad_um1_sq": gU * vol,
        "lp_um1": (sup * vol) ** (1.0 / params.p_diag),
        "v_min": vmin,
        "v_max": vmax,
        "pairing_values": tuple(pair * vol),
    }


def record(
    state: State,
    grid: Grid,
    params: Params,
    prev_record: DiagnosticsRecord | None = None,
    basis: np.ndarray | None = None,
) -> DiagnosticsRecord:
    if basis is None:
        basis = default_basis(grid)
    cur = _instant(state, grid, params, basis)
    if prev_record is None:
        return DiagnosticsRecord(
            t=state.t,
            cum_grad_w_sq=0.0,
            cum_grad_um1_sq=0.0,
            cum_lp_um1=0.0,
            dual_pairings=(0.0,) * len(cur["pairing_values"]),
            **cur,
        )
    if not state.t > prev_record.t:
        raise ValueError("records must advance in time")
    dt = state.t - prev_record.t
    p = prev_record
    return DiagnosticsRecord(
        t=state.t,
        cum_grad_w_sq=p.cum_grad_w_sq + 0.5 * dt * (p.grad_w_sq + cur["grad_w_sq"]),
        cum_grad_um1_sq=p.cum_grad_um1_sq + 0.5 * dt * (p.grad_um1_sq + cur["grad_um1_sq"]),
        cum_lp_um1=p.cum_lp_um1 + 0.5 * dt * (p.lp_um1 + cur["lp_um1"]),
        dual_pairings=tuple(
            acc + abs(new - old) for acc, new, old in zip(p.dual_pairings, cur["pairing_values"], p.pairing_values)
        ),
        **cur,
    )


def dual_pairing_accumulate(state_prev: State, state_next: State, basis: np.ndarray, grid: Grid, params: Params):
    """Per-mode ``|int ((u+eps)^(m-1)|_next - (u+eps)^(m-1)|_prev) psi_j|``."""
    d = (state_next.u + params.eps) ** (params.m - 1) - (state_prev.u + params.eps) ** (params.m - 1)
    return np.abs(np.tensordot(basis, d, axes=grid.dim)) * grid.cell_volume


def entropy_margin(rec: DiagnosticsRecord, params: Params) -> float:
    """Slack in ``int w + int_0^t int |grad w|^2 <= int w0 + lambda t``."""
    return (params.int_w0 + params.lam * rec.t) - (rec.int_w + rec.cum_grad_w_sq)


# both sides of the entropy inequality are long sums; at t = 0 the
# discretization allowance vanishes and only summation-order roundoff is left
ENTROPY_ROUNDOFF = 64 * np.finfo(float).eps


def entropy_tolerance(t: float, h: float, dt: float, c_audit: float, scale: float = 1.0) -> float:
    """``c_audit (h^2 + dt) t`` plus a roundoff floor relative to ``scale``."""
    return c_audit * (h * h + dt) * t + ENTROPY_ROUNDOFF * max(1.0, abs(scale))


def grad_bound_constant(m: float) -> float:
    if abs(m - 2.0) < 1e-9:
        return 16.0
    return 16.0 / min(1.0, abs(m - 2.0) * m / (m - 1.0))


def grad_um1_bound_margin(rec: DiagnosticsRecord, params: Params, constant: float | None = None) -> float:
    c = grad_bound_constant(params.m) if constant is None else constant
    return c * (params.int_w0 + params.lam * rec.t + params.lam) - rec.cum_grad_um1_sq


def v_bound_violations(rec: DiagnosticsRecord, params: Params) -> int:
    """Exact (tolerance-free) checks of ``0 < v <= ||v0||`` and the exponential floor."""
    floor = params.v0_min * np.exp(-params.c1 * rec.t)
    bad = 0
    bad += not rec.v_min > 0
    bad += not rec.v_max <= params.v0_max
    bad += not rec.v_min >= floor
    return int(bad)


def record_to_json(rec: DiagnosticsRecord, *, eps: float, m: float, run_id: str) -> str:
    row = asdict(rec)
    row["pairing_values"] = list(rec.pairing_values)
    row["dual_pairings"] = list(rec.dual_pairings)
    row.update(eps=eps, m=m, run_id=run_id)
    return json.dumps(row)


def record_from_json(line: str) -> DiagnosticsRecord:
    row = json.loads(line)
    for key in ("eps", "m", "run_id"):
        row.pop(key, None)
    row["pairing_values"] = tuple(row["pairing_values"])
    row["dual_pairings"] = tuple(row["dual_pairings"])
    return DiagnosticsRecord(**row)
