"""Explicit finite-volume integrators for the regularized system.

The (u, v) integrator is the production path: upwind-mobility fluxes for u,
then explicit diffusion followed by the exact exponential reaction for v.
The (u, w) integrator of the log-transformed system exists only to
cross-check it.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .config import RunConfig, initial_fields, make_params
from .diagnostics import DiagnosticsRecord, default_basis, record, v_bound_violations
from .grid import Grid, State
from .regularization import Params, w_of_v

log = logging.getLogger(__name__)

NEGATIVITY_TOL = 1e-13


class StepError(RuntimeError):
    """A step produced an inadmissible state; carries the failure time and cell."""

    def __init__(self, message: str, t: float, cell=None):
        super().__init__(f"{message} at t={t!r}" + (f", cell {cell}" if cell is not None else ""))
        self.t = t
        self.cell = cell
        self.member = None


@dataclass
class WState:
    t: float
    u: np.ndarray
    w: np.ndarray


def _as3(f: np.ndarray, grid: Grid) -> np.ndarray:
    return np.ascontiguousarray(f, dtype=float).reshape(grid.shape3)


def stable_dt(state, grid: Grid, params: Params, wform: bool = False) -> float:
    """Largest admissible explicit step.

    The u update stays a convex combination when
    ``dt * 2 dim (max D / h^2 + max|V| / h) <= 1``; ``cfl_safety`` scales that
    bound, it is capped by ``h^2``, and finally by ``h^2 / (2 dim)`` so the
    unit-diffusivity v (or w) substep keeps its maximum principle.
    """
    q = state.w if wform else state.v
    if not (np.all(np.isfinite(state.u)) and np.all(np.isfinite(q))):
        raise ValueError("state contains non-finite values")
    return _kernels.stable_dt(
        _as3(state.u, grid), _as3(q, grid), grid.h, grid.dim, params.m, params.eps, params.cfl_safety, wform
    )


def compute_fluxes(state, grid: Grid, params: Params, wform: bool = False) -> list[np.ndarray]:
    """Face fluxes for u, one array per axis including the (zero) boundary faces.

    Along axis ``a`` the array has ``cells + 1`` entries; entry ``i`` is the
    face between cells ``i-1`` and ``i``.
    """
    q = state.w if wform else state.v
    try:
        fx, fy, fz = _kernels.fluxes(_as3(state.u, grid), _as3(q, grid), grid.h, params.m, params.eps, wform)
    except FloatingPointError as exc:
        raise StepError(str(exc), state.t) from exc
    out = []
    for a, f in enumerate((fx, fy, fz)[: grid.dim]):
        shape = list(grid.shape)
        shape[a] += 1
        out.append(f.reshape(shape))
    return out


def _advance_u(state, grid, params, dt, wform):
    q = state.w if wform else state.v
    u3 = _as3(state.u, grid)
    try:
        fx, fy, fz = _kernels.fluxes(u3, _as3(q, grid), grid.h, params.m, params.eps, wform)
    except FloatingPointError as exc:
        raise StepError(str(exc), state.t) from exc
    u_new = _kernels.update_u(u3, fx, fy, fz, dt, grid.h).reshape(grid.shape)
    i = int(np.argmin(u_new))
    if not u_new.flat[i] >= -NEGATIVITY_TOL:
        raise StepError(
            f"negative density {u_new.flat[i]!r} (step size too large)",
            state.t,
            np.unravel_index(i, grid.shape),
        )
    return u3, u_new


_STATUS_TEXT = {
    _kernels.NEG_U: "negative density (step size too large)",
    _kernels.NONPOS_V: "non-positive signal",
    _kernels.BAD_FACE: "non-positive signal entering the flux",
    _kernels.DT_FIXED_UNSTABLE: "fixed step exceeds the stable step",
    _kernels.NONFINITE: "non-finite state",
}


def _raise_status(status: int, bad: int, t: float, grid: Grid):
    cell = None if bad < 0 else tuple(int(i) for i in np.unravel_index(bad, grid.shape))
    raise StepError(_STATUS_TEXT[status], t, cell)


def step(state: State, grid: Grid, params: Params, dt: float) -> State:
    u_new, v_new, status, bad = _kernels.step_uv(
        _as3(state.u, grid), _as3(state.v, grid), dt, grid.h, params.m, params.eps, NEGATIVITY_TOL
    )
    if status != _kernels.OK:
        _raise_status(status, bad, state.t, grid)
    return State(state.t + dt, u_new.reshape(grid.shape), v_new.reshape(grid.shape))


def step_w_form(state: WState, grid: Grid, params: Params, dt: float) -> WState:
    u3, u_new = _advance_u(state, grid, params, dt, wform=True)
    w_new = _kernels.update_w(u3, _as3(state.w, grid), dt, grid.h, params.eps).reshape(grid.shape)
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(w_new))):
        raise StepError("non-finite state", state.t)
    return WState(state.t + dt, u_new, w_new)


# ------------------------------------------------------------ trajectories


@dataclass
class Trajectory:
    """Snapshots of one run on a fixed grid, stacked along axis 0."""

    grid: Grid
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    m: float
    eps: float
    v0_max: float
    dt_max: float
    run_id: str = "run"

    @property
    def lam(self) -> float:
        return float(np.sum(self.u[0]) * self.grid.cell_volume)

    def w(self) -> np.ndarray:
        return -np.log(self.v / self.v0_max)

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class RunResult:
    grid: Grid
    params: Params
    snapshots: list
    records: list
    steps: int
    dt_min: float
    dt_max: float
    max_mass_deviation: float
    bound_violations: int
    run_id: str = "run"
    config: RunConfig | None = None
    max_u: float = 0.0
    wall_time: float = 0.0

    def trajectory(self) -> Trajectory:
        return Trajectory(
            grid=self.grid,
            times=np.array([s.t for s in self.snapshots]),
            u=np.array([s.u for s in self.snapshots]),
            v=np.array([s.v for s in self.snapshots]),
            m=self.params.m,
            eps=self.params.eps,
            v0_max=self.params.v0_max,
            dt_max=self.dt_max,
            run_id=self.run_id,
        )

    @property
    def final(self) -> State:
        return self.snapshots[-1]


class Simulation:
    """One (u, v) run advanced segment by segment.

    Between emitted records the compiled ``segment`` kernel advances the
    state and accumulates every diagnostic at step resolution.  Several
    simulations can be driven in lockstep with :func:`drive`.
    """

    def __init__(
        self,
        grid: Grid,
        params: Params,
        u0: np.ndarray,
        v0: np.ndarray,
        snapshot_times,
        diagnostics_every: int = 1,
        dt_fixed: float | None = None,
        run_id: str = "run",
    ):
        self.grid = grid
        self.params = params
        self.dt_fixed = dt_fixed
        self.every = diagnostics_every
        self.run_id = run_id
        self.t = 0.0
        self.u = _as3(np.array(u0, dtype=float), grid).copy()
        self.v = _as3(np.array(v0, dtype=float), grid).copy()
        self.basis = default_basis(grid)
        self._basis3 = np.ascontiguousarray(self.basis.reshape((self.basis.shape[0],) + grid.shape3))
        first = record(self.state, grid, params, basis=self.basis)
        nb = self.basis.shape[0]
        self.inst = np.array(
            [first.mass_u, first.int_w, first.grad_w_sq, first.grad_um1_sq, first.lp_um1, first.v_min, first.v_max]
            + list(first.pairing_values)
        )
        self.cum = np.zeros(3 + nb)
        self.stats = np.array([0.0, np.inf, 0.0, 0.0, float(v_bound_violations(first, params)), float(np.max(u0))])
        self.records: list[DiagnosticsRecord] = [first]
        self.snapshots = [self.state]
        self.stops = sorted(t for t in set(snapshot_times) | {params.t_final} if 0 < t <= params.t_final)

    @property
    def state(self) -> State:
        return State(self.t, self.u.reshape(self.grid.shape).copy(), self.v.reshape(self.grid.shape).copy())

    @property
    def done(self) -> bool:
        return not self.stops

    @property
    def steps(self) -> int:
        return int(self.stats[0])

    def current_record(self) -> DiagnosticsRecord:
        i, c = self.inst, self.cum
        return DiagnosticsRecord(
            t=self.t,
            mass_u=i[0],
            int_w=i[1],
            grad_w_sq=i[2],
            cum_grad_w_sq=c[0],
            grad_um1_sq=i[3],
            cum_grad_um1_sq=c[1],
            lp_um1=i[4],
            cum_lp_um1=c[2],
            v_min=i[5],
            v_max=i[6],
            pairing_values=tuple(i[7:]),
            dual_pairings=tuple(c[3:]),
        )

    def allowed_dt(self) -> float:
        p = self.params
        dt = _kernels.stable_dt(self.u, self.v, self.grid.h, self.grid.dim, p.m, p.eps, p.cfl_safety, False)
        if self.dt_fixed is not None:
            if self.dt_fixed > dt:
                raise StepError(f"fixed step {self.dt_fixed!r} exceeds stable step {dt!r}", self.t)
            dt = self.dt_fixed
        return dt

    def advance(self, max_steps: int | None = None, dt: float | None = None) -> None:
        """Run until the next record emission, snapshot time, or ``max_steps``.

        With ``dt`` given exactly one step of that size is taken (clipped to
        the next snapshot time).
        """
        p, g = self.params, self.grid
        if dt is not None:
            max_steps = 1
        elif max_steps is None:
            max_steps = self.every - self.steps % self.every
        stop = self.stops[0]
        u, v, t, landed, status, bad = _kernels.segment(
            self.u, self.v, self.t, stop, max_steps,
            -1.0 if dt is None else dt,
            -1.0 if self.dt_fixed is None else self.dt_fixed,
            g.h, g.dim, p.m, p.eps, p.cfl_safety, NEGATIVITY_TOL,
            p.v0_max, p.v0_min, p.c1, p.lam, p.p_diag,
            self._basis3, self.inst, self.cum, self.stats,
        )
        if status != _kernels.OK:
            _raise_status(status, bad, self.t, g)
        self.u, self.v, self.t = u, v, t
        if landed or self.steps % self.every == 0:
            self.records.append(self.current_record())
        if landed:
            self.snapshots.append(self.state)
            self.stops.pop(0)

    def result(self, config: RunConfig | None = None, wall_time: float = 0.0) -> RunResult:
        s = self.stats
        return RunResult(
            grid=self.grid,
            params=self.params,
            snapshots=self.snapshots,
            records=self.records,
            steps=int(s[0]),
            dt_min=float(s[1]),
            dt_max=float(s[2]),
            max_mass_deviation=float(s[3]),
            bound_violations=int(s[4]),
            run_id=self.run_id,
            config=config,
            max_u=float(s[5]),
            wall_time=wall_time,
        )


def drive(sims: list[Simulation]) -> None:
    """Advance simulations sharing one time grid.

    A single simulation runs free; several are stepped with the common
    step size ``min`` over their stable steps, so they visit identical times.
    """
    if len(sims) == 1:
        while not sims[0].done:
            sims[0].advance()
        return
    while not sims[0].done:
        i = 0
        try:
            dt = math.inf
            for i, s in enumerate(sims):
                dt = min(dt, s.allowed_dt())
            for i, s in enumerate(sims):
                s.advance(dt=dt)
        except StepError as exc:
            exc.member = i
            raise


def simulation_from_config(config: RunConfig, **overrides) -> Simulation:
    grid = config.build_grid()
    u0, v0 = initial_fields(config, grid)
    params = make_params(config, grid, u0, v0)
    kwargs = dict(
        snapshot_times=config.snapshot_times(),
        diagnostics_every=config.output["diagnostics_every"],
        dt_fixed=config.params["dt_fixed"],
        run_id=config.run_id,
    )
    kwargs.update(overrides)
    return Simulation(grid, params, u0, v0, **kwargs)


def run(config: RunConfig) -> RunResult:
    start = time.perf_counter()
    sim = simulation_from_config(config)
    drive([sim])
    res = sim.result(config, time.perf_counter() - start)
    log.info("run %s: %d steps in %.2fs", res.run_id, res.steps, res.wall_time)
    return res


def w_form_gap(grid: Grid, params: Params, u0: np.ndarray, v0: np.ndarray, t_final: float) -> dict:
    """Run both integrators in lockstep and compare ``w`` with ``w_of_v(v)`` at ``t_final``."""
    sv = State(0.0, np.array(u0, dtype=float), np.array(v0, dtype=float))
    sw = WState(0.0, sv.u.copy(), np.asarray(w_of_v(sv.v, params.v0_max), dtype=float))
    steps = 0
    while sv.t < t_final:
        dt = min(stable_dt(sv, grid, params), stable_dt(sw, grid, params, wform=True))
        remaining = t_final - sv.t
        land = dt >= remaining * (1 - 1e-9)
        if land:
            dt = remaining
        sv = step(sv, grid, params, dt)
        sw = step_w_form(sw, grid, params, dt)
        if land:
            sv.t = sw.t = t_final
        steps += 1
    w_from_v = w_of_v(sv.v, params.v0_max)
    return {
        "w_gap_inf": float(np.max(np.abs(sw.w - w_from_v))),
        "u_gap_inf": float(np.max(np.abs(sw.u - sv.u))),
        "steps": steps,
        "h": grid.h,
    }
