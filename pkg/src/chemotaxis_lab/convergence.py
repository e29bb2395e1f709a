"""Convergence experiments: eps-sweeps, mesh refinement and exponent scans."""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, from_dict
from .diagnostics import entropy_margin, entropy_tolerance, grad_um1_bound_margin
from .regularization import critical_exponent
from .stepper import StepError, Trajectory, drive, run, simulation_from_config, stable_dt

log = logging.getLogger(__name__)

THREADS_ENV = "CHEMOTAXIS_LAB_THREADS"
LP_SPREAD = 10.0  # allowed max/min ratio of cum_lp_um1 across a sweep


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_tasks))


def _trapz(values, times) -> float:
    values = np.asarray(values)
    return float(np.sum(0.5 * np.diff(times) * (values[1:] + values[:-1])))


def _space_sum(x: np.ndarray) -> np.ndarray:
    return np.sum(x, axis=tuple(range(1, x.ndim)))


def l1_spacetime(a: Trajectory, b: Trajectory, field_name: str) -> float:
    d = np.abs(getattr(a, field_name) - getattr(b, field_name))
    return _trapz(_space_sum(d) * a.grid.cell_volume, a.times)


def grad_w_l2_spacetime(a: Trajectory, b: Trajectory) -> float:
    dw = a.w() - b.w()
    g = a.grid
    sq = np.zeros(len(a.times))
    for ax in range(g.dim):
        sq += _space_sum((np.diff(dw, axis=ax + 1) / g.h) ** 2) * g.cell_volume
    return math.sqrt(max(_trapz(sq, a.times), 0.0))


# ------------------------------------------------------------------ eps sweep


class SweepError(RuntimeError):
    def __init__(self, eps: float, cause: Exception):
        super().__init__(f"sweep member eps={eps!r} failed: {cause}")
        self.eps = eps
        self.cause = cause


@dataclass
class ConvergenceReport:
    eps: list
    pairs: list
    members: list
    threshold: float
    entropy_bound: float
    verdicts: dict = field(default_factory=dict)
    run_id: str = "sweep"

    @property
    def delta_u(self) -> list:
        return [p["delta_u"] for p in self.pairs]

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _sweep_verdicts(pairs, members, threshold, entropy_bound, decreasing_from):
    du = [p["delta_u"] for p in pairs]
    lp = [m["cum_lp_um1"] for m in members]
    tail = du[decreasing_from - 1:]
    return {
        "deltas_nonnegative": all(p[k] >= 0 for p in pairs for k in ("delta_u", "delta_w", "delta_v")),
        "delta_u_eventually_decreasing": all(b <= a for a, b in zip(tail, tail[1:])),
        "final_delta_u_below_threshold": du[-1] <= threshold,
        "uniform_entropy_bound": all(m["cum_grad_w_sq"] <= entropy_bound + m["entropy_tol"] for m in members),
        "uniform_lp_bound": bool(max(lp) <= LP_SPREAD * min(lp)),
    }


def eps_sweep(
    base_config: RunConfig,
    eps_list,
    threshold: float | None = None,
    decreasing_from: int = 2,
) -> ConvergenceReport:
    """Run one member per eps on a shared time grid and compare consecutive pairs.

    Members are stepped in lockstep (common step size), so their snapshots
    sit at identical times and differences are plain vector norms.
    ``decreasing_from`` is the 1-based pair index from which delta_u must be
    non-increasing.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 2:
        raise ValueError("eps_list needs at least two entries")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    configs = [base_config.replace(eps=e, run_id=f"{base_config.run_id}_eps{k + 1}") for k, e in enumerate(eps_list)]
    sims = [simulation_from_config(c) for c in configs]
    try:
        drive(sims)
    except StepError as exc:
        raise SweepError(eps_list[exc.member], exc) from exc
    results = [s.result(c) for s, c in zip(sims, configs)]
    trajs = [r.trajectory() for r in results]

    p0 = results[0].params
    t_final = p0.t_final
    if threshold is None:
        threshold = 1e-3 * p0.lam * t_final
    entropy_bound = p0.int_w0 + p0.lam * t_final
    c_audit = base_config.audit["c_audit"]
    members = []
    for e, r in zip(eps_list, results):
        last = r.records[-1]
        members.append({
            "eps": e,
            "steps": r.steps,
            "max_u": r.max_u,
            "cum_grad_w_sq": last.cum_grad_w_sq,
            "cum_lp_um1": last.cum_lp_um1,
            "dual_pairings_max": max(last.dual_pairings),
            "entropy_tol": entropy_tolerance(t_final, r.grid.h, r.dt_max, c_audit, entropy_bound),
            "max_mass_deviation": r.max_mass_deviation,
            "bound_violations": r.bound_violations,
        })
    pairs = []
    for k in range(len(trajs) - 1):
        a, b = trajs[k], trajs[k + 1]
        pairs.append({
            "k": k + 1,
            "eps": eps_list[k],
            "eps_next": eps_list[k + 1],
            "delta_u": l1_spacetime(a, b, "u"),
            "delta_w": grad_w_l2_spacetime(a, b),
            "delta_v": l1_spacetime(a, b, "v"),
        })
    verdicts = _sweep_verdicts(pairs, members, threshold, entropy_bound, decreasing_from)
    return ConvergenceReport(eps_list, pairs, members, threshold, entropy_bound, verdicts, base_config.run_id)


def write_sweep_report(report: ConvergenceReport, directory) -> tuple[Path, Path]:
    from .persistence import write_json_atomic

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    jpath, cpath = directory / "sweep.json", directory / "sweep.csv"
    write_json_atomic(jpath, report.to_dict())
    with open(cpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "eps", "delta_u", "delta_w", "delta_v"])
        for p in report.pairs:
            w.writerow([p["k"], repr(p["eps"]), repr(p["delta_u"]), repr(p["delta_w"]), repr(p["delta_v"])])
    return jpath, cpath


# ---------------------------------------------------------------- refinement


@dataclass
class ObservedOrderReport:
    cells: list
    dts: list
    differences: list  # consecutive-level L1 differences at t_final
    errors: list  # against the finest level
    orders: list  # Richardson ratios of consecutive differences
    observed_order: float | None
    exact: bool
    contract_applies: bool
    min_order: float = 0.9

    @property
    def passed(self) -> bool:
        if self.exact or not self.contract_applies:
            return True
        return self.observed_order is not None and self.observed_order >= self.min_order

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def restrict(fine: np.ndarray, factor: int) -> np.ndarray:
    """Cell averages of ``fine`` over blocks of ``factor`` cells per axis."""
    shape = []
    for n in fine.shape:
        if n % factor:
            raise ValueError("levels are not nested")
        shape += [n // factor, factor]
    return fine.reshape(shape).mean(axis=tuple(range(1, 2 * fine.ndim, 2)))


def _order(a: float, b: float) -> float:
    if b == 0:
        return math.inf
    return math.log2(a / b)


def refinement_study(base_config: RunConfig, levels=3, dt_coarse: float | None = None, min_order: float = 0.9):
    """Observed L1 order of u at ``t_final`` under h/2, dt/4 refinement.

    ``levels`` is a level count or an explicit list of cell counts, each
    double the previous.  The coarse step defaults to half the stable step
    of the coarse initial state.
    """
    n0 = base_config.grid["cells"]
    cells = [n0 * 2**i for i in range(levels)] if isinstance(levels, int) else [int(c) for c in levels]
    if len(cells) < 3:
        raise ValueError("refinement needs at least three levels")
    for a, b in zip(cells, cells[1:]):
        if b != 2 * a:
            raise ValueError(f"levels are not nested halvings: {a} -> {b}")
    if dt_coarse is None:
        sim = simulation_from_config(base_config.replace(cells=cells[0]))
        dt_coarse = 0.5 * stable_dt(sim.state, sim.grid, sim.params)
    dts = [dt_coarse / 4**i for i in range(len(cells))]
    finals = []
    for n, dt in zip(cells, dts):
        cfg = base_config.replace(cells=n, dt_fixed=dt, snapshot_times=[], snapshot_count=1)
        finals.append(run(cfg).final.u)
    grid0 = base_config.replace(cells=cells[0]).build_grid()
    dim = grid0.dim

    def l1(a, b, n):
        return float(np.sum(np.abs(a - b)) * (base_config.grid["extent"] / n) ** dim)

    diffs = [l1(restrict(finals[i + 1], 2), finals[i], cells[i]) for i in range(len(cells) - 1)]
    errors = [l1(restrict(finals[-1], 2 ** (len(cells) - 1 - i)), finals[i], cells[i]) for i in range(len(cells) - 1)]
    exact = all(d == 0 for d in diffs)
    orders = [] if exact else [_order(a, b) for a, b in zip(diffs, diffs[1:])]
    observed = None if exact else min(orders)
    m = float(base_config.params["m"])
    return ObservedOrderReport(cells, dts, diffs, errors, orders, observed, exact, m >= 2.0, min_order)


# -------------------------------------------------------------- exponent scan


def _scan_member(cfg_dict: dict) -> dict:
    cfg = from_dict(cfg_dict)
    m = float(cfg.params["m"])
    out = {"m": m, "run_id": cfg.run_id}
    try:
        res = run(cfg)
    except StepError as exc:
        out.update(completed=False, failure=str(exc), failure_t=exc.t, failure_cell=exc.cell)
        return out
    p = res.params
    c_audit = cfg.audit["c_audit"]
    ent = min(entropy_margin(r, p) + entropy_tolerance(r.t, res.grid.h, res.dt_max, c_audit, p.int_w0 + p.lam * r.t) for r in res.records)
    out.update(
        completed=True,
        max_u=res.max_u,
        steps=res.steps,
        max_mass_deviation=res.max_mass_deviation,
        bound_violations=res.bound_violations,
        min_entropy_margin=min(entropy_margin(r, p) for r in res.records),
        min_entropy_slack_with_tol=ent,
        min_grad_bound_margin=min(grad_um1_bound_margin(r, p) for r in res.records),
        final_lp_um1=res.records[-1].lp_um1,
    )
    return out


def critical_exponent_scan(base_config: RunConfig, m_list, workers: int | None = None) -> dict:
    """Observational sweep over m; members run in separate processes."""
    dim = base_config.grid["dim"]
    threshold = critical_exponent(dim)
    m_list = [float(m) for m in m_list]
    cfgs = [base_config.replace(m=m, run_id=f"{base_config.run_id}_m{m:g}").to_dict() for m in m_list]
    n = workers or worker_count(len(cfgs))
    if n == 1:
        members = [_scan_member(c) for c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            members = list(pool.map(_scan_member, cfgs))
    for mem in members:
        mem["supercritical"] = mem["m"] > threshold
    return {
        "dim": dim,
        "threshold": threshold,
        "straddles_threshold": min(m_list) <= threshold < max(m_list),
        "members": members,
        "all_completed": all(mem["completed"] for mem in members),
    }


def write_json_report(report, path) -> Path:
    from .persistence import write_json_atomic

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict() if hasattr(report, "to_dict") else report
    write_json_atomic(path, payload)
    return path
