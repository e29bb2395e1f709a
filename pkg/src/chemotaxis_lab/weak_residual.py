"""Residuals of the generalized-solution integral relations on stored trajectories.

Every relation is tested against ``phi(x, t) = (a + cos-mode(x)) bump(t)``.
In time the stored data is interpolated linearly between snapshots and
integrated against the exact temporal profile (a product trapezoid rule);
in space, undifferentiated terms use cell centres and gradient terms the
interior faces.

By default the relations are assembled at the trajectory's own ``eps``:
``U = (u + eps)^(m-1)`` and the signal gradient carries the factor
``u f_eps'(u) / (u + eps)``; with ``limit_form=True`` the unregularized
forms (``U = u^(m-1)``, factor 1, reaction ``u v``) are used instead.  The
two coincide as ``eps -> 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .regularization import f_eps, f_eps_prime
from .stepper import Trajectory

M2_WINDOW = 1e-9


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def is_identity_branch(m: float) -> bool:
    return abs(m - 2.0) < M2_WINDOW


# ------------------------------------------------------------ test functions


def bump(t, t_support: float):
    t = np.asarray(t, dtype=float)
    s = t / t_support
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out if out.ndim else float(out)


def bump_dt(t, t_support: float):
    t = np.asarray(t, dtype=float)
    s = t / t_support
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si**2)) * (-2.0 * si / (1.0 - si**2) ** 2) / t_support
    return out if out.ndim else float(out)


def product_weights(times: np.ndarray, t_support: float, derivative: bool = False):
    """Weights ``(w0, w1)`` with ``int X b = sum_n X_n w0_n + X_{n+1} w1_n`` for linear X.

    For ``derivative=True`` the profile is ``b'`` and the weights come from
    integrating by parts, so constant data telescopes to ``b(t_N) - b(t_0)``.
    """
    t0, t1 = times[:-1], times[1:]
    dt = t1 - t0
    nodes = 0.5 * (t0 + t1)[:, None] + 0.5 * dt[:, None] * _GL_X[None, :]
    vals = bump(nodes.ravel(), t_support).reshape(nodes.shape)
    s = (nodes - t0[:, None]) / dt[:, None]
    full = 0.5 * dt * (vals @ _GL_W)
    upper = 0.5 * dt * ((vals * s) @ _GL_W)
    if not derivative:
        return full - upper, upper
    b0, b1 = bump(t0, t_support), bump(t1, t_support)
    return full / dt - b0, b1 - full / dt


def _time_integral(series: np.ndarray, weights) -> float:
    w0, w1 = weights
    return float(series[:-1] @ w0 + series[1:] @ w1)


@dataclass(frozen=True)
class TestFunction:
    mode: tuple
    t_support: float
    nonneg: bool
    shift: float
    extent: float

    __test__ = False  # not a pytest class

    @property
    def ident(self) -> str:
        k = "".join(str(i) for i in self.mode)
        return f"k{k}_T{self.t_support:.6g}" + ("_pos" if self.nonneg else "")

    def _mode_factor(self, xs, axis=None):
        out = 1.0
        for a, (x, k) in enumerate(zip(xs, self.mode)):
            arg = k * np.pi * x / self.extent
            if axis == a:
                out = out * (-(k * np.pi / self.extent) * np.sin(arg))
            else:
                out = out * np.cos(arg)
        return out

    def spatial(self, grid: Grid) -> np.ndarray:
        """``a + cos-mode`` at cell centres."""
        return self.shift + self._mode_factor(grid.centers()) * np.ones(grid.shape)

    def spatial_faces(self, grid: Grid, axis: int) -> np.ndarray:
        xs = grid.face_centers(axis)
        return self.shift + self._mode_factor(xs) * np.ones(xs[0].shape)

    def spatial_grad_faces(self, grid: Grid, axis: int) -> np.ndarray:
        """Component ``axis`` of the spatial gradient at the interior faces normal to it."""
        xs = grid.face_centers(axis)
        return self._mode_factor(xs, axis=axis) * np.ones(xs[0].shape)

    def profile(self, t):
        return bump(t, self.t_support)

    def profile_dt(self, t):
        return bump_dt(t, self.t_support)

    def scale(self, grid: Grid, t_final: float) -> float:
        """``||phi||_inf + ||grad phi||_inf + ||phi_t||_inf`` sampled on the grid."""
        ts = np.linspace(0.0, max(t_final, self.t_support), 4001)
        sp = np.max(np.abs(self.spatial(grid)))
        grad = 0.0
        for a in range(grid.dim):
            # gradient magnitude bounded by the sum of its components
            grad += np.max(np.abs(self.spatial_grad_faces(grid, a)), initial=0.0)
        return float(sp + grad + sp * np.max(np.abs(self.profile_dt(ts))))


def make_test_function(k, t_support: float, nonneg: bool, grid: Grid, t_final: float | None = None) -> TestFunction:
    mode = (int(k),) * grid.dim if np.ndim(k) == 0 else tuple(int(i) for i in k)
    if len(mode) != grid.dim:
        raise ValueError(f"mode {k!r} needs {grid.dim} indices")
    if any(i < 0 for i in mode):
        raise ValueError("mode indices must be non-negative")
    if not t_support > 0:
        raise ValueError("t_support must be positive")
    if t_final is not None and t_support > t_final * (1 + 1e-12):
        raise ValueError("t_support must not exceed t_final")
    # a pure cosine mode changes sign unless it is the constant mode
    shift = 1.0 if nonneg and any(mode) else 0.0
    return TestFunction(mode, float(t_support), bool(nonneg), shift, grid.extent)


def default_family(grid: Grid, t_final: float, nonneg: bool = True) -> list[TestFunction]:
    modes = [0, 1, 2] if grid.dim == 1 else [(0, 0), (1, 0), (1, 1)]
    return [
        make_test_function(k, ts, nonneg, grid, t_final)
        for k in modes
        for ts in (0.5 * t_final, t_final)
    ]


# ---------------------------------------------------------------- residuals


def _check_traj(traj: Trajectory) -> None:
    if np.any(traj.v <= 0):
        raise ValueError("trajectory has non-positive signal values")


def _faces(f: np.ndarray, axis: int, time_axis: bool = True) -> np.ndarray:
    """Arithmetic face means along ``axis`` (spatial axis; leading time axis kept)."""
    ax = axis + 1 if time_axis else axis
    n = f.shape[ax]
    lo = np.take(f, range(n - 1), axis=ax)
    hi = np.take(f, range(1, n), axis=ax)
    return 0.5 * (lo + hi)


def _assembled_fields(traj: Trajectory, m: float, eps: float, limit_form: bool):
    u = traj.u
    if limit_form:
        U = u ** (m - 1.0)
        drift_factor = np.ones_like(u)
    else:
        U = (u + eps) ** (m - 1.0)
        drift_factor = u * np.asarray(f_eps_prime(u, eps)) / (u + eps)
    return U, drift_factor


def residual_u_terms(traj: Trajectory, phi: TestFunction, params=None, limit_form: bool = False) -> dict:
    """The six integrals of the density relation, each with its coefficient applied.

    Keys: ``lhs_time``, ``lhs_initial``, ``rhs_dissipation``, ``rhs_cross``,
    ``rhs_drift``, ``rhs_drift_flux``.  ``R_u`` is the sum of the ``lhs_*``
    terms minus the sum of the ``rhs_*`` terms.
    """
    _check_traj(traj)
    g = traj.grid
    m = params.m if params is not None else traj.m
    eps = params.eps if params is not None else traj.eps
    identity = is_identity_branch(m)
    if not identity and not phi.nonneg:
        raise ValueError("the inequality branch (m != 2) needs a non-negative test function")
    times = traj.times
    vol = g.cell_volume
    wb = product_weights(times, phi.t_support)
    wbt = product_weights(times, phi.t_support, derivative=True)
    U, gfac = _assembled_fields(traj, m, eps, limit_form)
    w = traj.w()
    cell_phi = phi.spatial(g)

    A = np.sum(U * cell_phi, axis=tuple(range(1, g.dim + 1))) * vol
    I0 = float(np.sum(U[0] * cell_phi) * vol * phi.profile(times[0]))
    B = np.zeros(len(times))
    C = np.zeros(len(times))
    D = np.zeros(len(times))
    E = np.zeros(len(times))
    sum_axes = tuple(range(1, g.dim + 1))
    for a in range(g.dim):
        dU = np.diff(U, axis=a + 1) / g.h
        dw = np.diff(w, axis=a + 1) / g.h
        G = -_faces(gfac, a) * dw  # effective grad ln v component
        UG = -_faces(U * gfac, a) * dw
        Uf = _faces(U, a)
        pf = phi.spatial_faces(g, a)
        pg = phi.spatial_grad_faces(g, a)
        B += np.sum(dU * dU * pf, axis=sum_axes) * vol
        C += np.sum(Uf * dU * pg, axis=sum_axes) * vol
        D += np.sum(dU * G * pf, axis=sum_axes) * vol
        E += np.sum(UG * pg, axis=sum_axes) * vol
    iA = _time_integral(A, wbt)
    iB, iC, iD, iE = (_time_integral(x, wb) for x in (B, C, D, E))

    if identity:
        return {
            "lhs_time": -0.5 * iA,
            "lhs_initial": -0.5 * I0,
            "rhs_dissipation": 0.0,
            "rhs_cross": -iC,
            "rhs_drift": 0.0,
            "rhs_drift_flux": 0.5 * iE,
        }
    c = (m - 1.0) / (m * (m - 2.0))
    return {
        "lhs_time": -c * iA,
        "lhs_initial": -c * I0,
        "rhs_dissipation": -iB,
        "rhs_cross": -(m - 1.0) / (m - 2.0) * iC,
        "rhs_drift": (m - 1.0) / m * iD,
        "rhs_drift_flux": (m - 1.0) ** 2 / (m * (m - 2.0)) * iE,
    }


def combine_terms(terms: dict) -> float:
    lhs = terms["lhs_time"] + terms["lhs_initial"]
    rhs = terms["rhs_dissipation"] + terms["rhs_cross"] + terms["rhs_drift"] + terms["rhs_drift_flux"]
    return float(lhs - rhs)


def residual_u(traj: Trajectory, phi: TestFunction, params=None, limit_form: bool = False) -> float:
    return combine_terms(residual_u_terms(traj, phi, params, limit_form))


def residual_v(traj: Trajectory, phi: TestFunction, params=None, limit_form: bool = False) -> float:
    """LHS minus RHS of the signal identity."""
    _check_traj(traj)
    g = traj.grid
    eps = params.eps if params is not None else traj.eps
    times = traj.times
    vol = g.cell_volume
    sum_axes = tuple(range(1, g.dim + 1))
    wb = product_weights(times, phi.t_support)
    wbt = product_weights(times, phi.t_support, derivative=True)
    cell_phi = phi.spatial(g)
    v = traj.v
    reaction = traj.u if limit_form else np.asarray(f_eps(traj.u, eps))

    lhs_t = np.sum(v * cell_phi, axis=sum_axes) * vol
    lhs0 = float(np.sum(v[0] * cell_phi) * vol * phi.profile(times[0]))
    grad = np.zeros(len(times))
    for a in range(g.dim):
        dv = np.diff(v, axis=a + 1) / g.h
        grad += np.sum(dv * phi.spatial_grad_faces(g, a), axis=sum_axes) * vol
    react = np.sum(reaction * v * cell_phi, axis=sum_axes) * vol
    lhs = _time_integral(lhs_t, wbt) + lhs0
    rhs = _time_integral(grad, wb) + _time_integral(react, wb)
    return float(lhs - rhs)


def mass_conservation_audit(traj: Trajectory) -> float:
    masses = np.sum(traj.u, axis=tuple(range(1, traj.grid.dim + 1))) * traj.grid.cell_volume
    lam = masses[0]
    return float(np.max(np.abs(masses - lam)) / lam)


def residual_tolerance(c_wr: float, traj: Trajectory, phi: TestFunction) -> float:
    return c_wr * (traj.grid.h + traj.dt_max) * phi.scale(traj.grid, float(traj.times[-1]))


def audit_trajectory(traj: Trajectory, c_wr: float, mass_tol: float = 1e-12, family=None,
                     limit_form: bool = False) -> list[dict]:
    """All weak-form audits of one trajectory, one JSON-ready entry per check."""
    identity = is_identity_branch(traj.m)
    branch = "identity" if identity else "inequality"
    t_final = float(traj.times[-1])
    if family is None:
        family = default_family(traj.grid, t_final, nonneg=not identity)
    dev = mass_conservation_audit(traj)
    entries = [{
        "run_id": traj.run_id,
        "phi_id": None,
        "check": "mass",
        "R": dev,
        "tol": mass_tol,
        "pass": bool(dev <= mass_tol),
        "m_branch": branch,
    }]
    for phi in family:
        tol = residual_tolerance(c_wr, traj, phi)
        ru = residual_u(traj, phi, limit_form=limit_form)
        ok_u = abs(ru) <= tol if identity else ru <= tol
        rv = residual_v(traj, phi, limit_form=limit_form)
        entries.append({"run_id": traj.run_id, "phi_id": phi.ident, "check": "u", "R": ru, "tol": tol,
                        "pass": bool(ok_u), "m_branch": branch})
        entries.append({"run_id": traj.run_id, "phi_id": phi.ident, "check": "v", "R": rv, "tol": tol,
                        "pass": bool(abs(rv) <= tol), "m_branch": branch})
    return entries
