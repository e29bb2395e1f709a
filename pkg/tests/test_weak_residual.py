import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from chemotaxis_lab.grid import Grid, build_grid
from chemotaxis_lab.regularization import f_eps, f_eps_prime
from chemotaxis_lab.stepper import Trajectory, run
from chemotaxis_lab.weak_residual import (
    TestFunction,
    audit_trajectory,
    bump,
    bump_dt,
    combine_terms,
    default_family,
    make_test_function,
    mass_conservation_audit,
    product_weights,
    residual_tolerance,
    residual_u,
    residual_u_terms,
    residual_v,
)
from conftest import GAUSS_U0, TILTED_V0, make_config


# ------------------------------------------------------------ test functions


def test_bump_endpoints_and_fd_consistency():
    T = 0.7
    assert bump(0.0, T) == 1.0
    assert bump(T, T) == 0.0 and bump(2 * T, T) == 0.0
    t = np.linspace(0.01, 0.69, 200)
    d = 1e-6
    fd = (bump(t + d, T) - bump(t - d, T)) / (2 * d)
    assert np.max(np.abs(fd - bump_dt(t, T))) <= 1e-8
    np.testing.assert_allclose(bump(t, T), [oracles.bump(x, T) for x in t], rtol=1e-15)


def test_k0_nonneg_is_pure_bump():
    g = build_grid(1, 16, 1.0)
    phi = make_test_function(0, 0.5, True, g, t_final=1.0)
    assert phi.shift == 0.0
    assert np.all(phi.spatial(g) == 1.0)
    assert np.all(phi.spatial_grad_faces(g, 0) == 0.0)


def test_nonneg_shift_makes_phi_nonnegative():
    for dim, k in ((1, 3), (2, (2, 1))):
        g = build_grid(dim, 12, 1.0)
        phi = make_test_function(k, 1.0, True, g)
        assert phi.shift == 1.0
        assert np.all(phi.spatial(g) >= 0)
        assert np.all(phi.spatial_faces(g, 0) >= 0)


def test_neumann_compatible():
    g = build_grid(1, 8, 2.0)
    phi = make_test_function(3, 1.0, False, g)
    ends = (np.array([0.0, 2.0]),)
    np.testing.assert_allclose(phi._mode_factor(ends, axis=0), 0.0, atol=1e-14)


def test_spatial_gradient_matches_fd():
    g = build_grid(2, 10, 1.5)
    phi = make_test_function((2, 1), 1.0, False, g)
    for axis in range(2):
        xs = g.face_centers(axis)
        d = 1e-6
        hi = list(xs)
        lo = list(xs)
        hi[axis] = xs[axis] + d
        lo[axis] = xs[axis] - d
        fd = (phi._mode_factor(hi) - phi._mode_factor(lo)) / (2 * d)
        np.testing.assert_allclose(phi.spatial_grad_faces(g, axis), fd, atol=1e-8)


@pytest.mark.parametrize("args", [(-1, 0.5, True), (1, 0.0, True), (1, 2.0, True), ((1, 1), 0.5, True)])
def test_make_test_function_rejects(args):
    g = build_grid(1, 8, 1.0)
    with pytest.raises(ValueError):
        make_test_function(*args, g, t_final=1.0)


def test_default_family():
    fam1 = default_family(build_grid(1, 8, 1.0), 1.0)
    assert [(p.mode, p.t_support) for p in fam1] == [((k,), T) for k in (0, 1, 2) for T in (0.5, 1.0)]
    fam2 = default_family(build_grid(2, 8, 1.0), 2.0, nonneg=False)
    assert [p.mode for p in fam2] == [(0, 0), (0, 0), (1, 0), (1, 0), (1, 1), (1, 1)]
    assert all(not p.nonneg and p.shift == 0 for p in fam2)
    assert len({p.ident for p in fam1}) == 6


@given(st.integers(0, 20), st.floats(0.0, 0.4), st.integers(0, 2**31 - 1), st.floats(0.3, 1.2))
def test_product_weights_match_adaptive_quad(extra, jitter, seed, T):
    # snapshot-like spacing: at least 20 intervals per bump support
    n = int(np.ceil(20 / T)) + 1 + extra
    base = np.linspace(0.0, 1.0, n)
    rng = np.random.default_rng(seed)
    times = base + jitter * (base[1] - base[0]) * rng.uniform(-1, 1, n)
    times[0], times[-1] = 0.0, 1.0
    times = np.sort(times)
    series = np.cos(3 * times) + times
    w = product_weights(times, T)
    got = series[:-1] @ w[0] + series[1:] @ w[1]
    ref = oracles.product_integral(times, series, lambda t: oracles.bump(t, T))
    assert got == pytest.approx(ref, rel=1e-10, abs=1e-12)
    wd = product_weights(times, T, derivative=True)
    got_d = series[:-1] @ wd[0] + series[1:] @ wd[1]
    ref_d = oracles.product_integral(times, series, lambda t: float(bump_dt(t, T)))
    assert got_d == pytest.approx(ref_d, rel=1e-10, abs=1e-11)
    # constant data telescopes exactly
    assert np.sum(wd[0] + wd[1]) == pytest.approx(bump(times[-1], T) - bump(times[0], T), abs=1e-15)


# -------------------------------------------------------- hand-assembled case


def _two_cell_trajectory(m, eps, u, v):
    g = Grid(1, 2, 1.0)  # below the build_grid minimum on purpose: hand-sized
    return Trajectory(g, np.array([0.0, 0.1, 0.25]), np.array(u, float), np.array(v, float), m, eps,
                      float(np.max(v)), 0.01)


def _hand_terms(traj, phi, limit):
    """The six integrals written out cell by cell and face by face, with
    ln v differenced directly and scipy doing the time integrals."""
    m, eps = traj.m, traj.eps
    h = 0.5
    T = phi.t_support
    # phi at centres x = 0.25, 0.75 and at the single face x = 0.5
    k = phi.mode[0]
    phi_c = [phi.shift + math.cos(k * math.pi * x) for x in (0.25, 0.75)]
    phi_f = phi.shift + math.cos(k * math.pi * 0.5)
    dphi_f = -k * math.pi * math.sin(k * math.pi * 0.5)
    A, B, C, D, E = [], [], [], [], []
    for n in range(3):
        u, v = traj.u[n], traj.v[n]
        if limit:
            U = [x ** (m - 1) for x in u]
            gfac = [1.0, 1.0]
        else:
            U = [(x + eps) ** (m - 1) for x in u]
            gfac = [x * oracles.rho(eps * x) / (x + eps) for x in u]
        dU = (U[1] - U[0]) / h
        dlnv = (math.log(v[1]) - math.log(v[0])) / h
        G = 0.5 * (gfac[0] + gfac[1]) * dlnv
        UG = 0.5 * (U[0] * gfac[0] + U[1] * gfac[1]) * dlnv
        A.append(h * (U[0] * phi_c[0] + U[1] * phi_c[1]))
        B.append(h * dU * dU * phi_f)
        C.append(h * 0.5 * (U[0] + U[1]) * dU * dphi_f)
        D.append(h * dU * G * phi_f)
        E.append(h * UG * dphi_f)
    t = traj.times
    b = lambda s: oracles.bump(s, T)  # noqa: E731
    bt = lambda s: float(bump_dt(s, T))  # noqa: E731
    iA = oracles.product_integral(t, A, bt)
    iB, iC, iD, iE = (oracles.product_integral(t, X, b) for X in (B, C, D, E))
    I0 = A[0] / 1.0 * b(0.0)
    return iA, iB, iC, iD, iE, I0


@pytest.mark.parametrize("m", [3.0, 1.5, 2.0])
@pytest.mark.parametrize("limit", [True, False])
def test_six_terms_against_hand_assembly(m, limit):
    eps = 0.25
    # second cell sits in the truncation zone (u > 1/eps) at the last level
    u = [[1.0, 2.0], [1.3, 1.7], [0.6, 5.0]]
    v = [[2.0, 1.5], [1.8, 1.4], [1.6, 1.2]]
    traj = _two_cell_trajectory(m, eps, u, v)
    phi = TestFunction((1,), 0.3, True, 1.0, 1.0)
    terms = residual_u_terms(traj, phi, limit_form=limit)
    iA, iB, iC, iD, iE, I0 = _hand_terms(traj, phi, limit)
    if abs(m - 2) < 1e-9:
        expect = {"lhs_time": -0.5 * iA, "lhs_initial": -0.5 * I0, "rhs_dissipation": 0.0,
                  "rhs_cross": -iC, "rhs_drift": 0.0, "rhs_drift_flux": 0.5 * iE}
    else:
        c = (m - 1) / (m * (m - 2))
        expect = {
            "lhs_time": -c * iA,
            "lhs_initial": -c * I0,
            "rhs_dissipation": -iB,
            "rhs_cross": -(m - 1) / (m - 2) * iC,
            "rhs_drift": (m - 1) / m * iD,
            "rhs_drift_flux": (m - 1) ** 2 / (m * (m - 2)) * iE,
        }
    assert set(terms) == set(expect)
    for key in expect:
        # 8-point Gauss-Legendre per interval against adaptive quad
        assert terms[key] == pytest.approx(expect[key], rel=1e-7, abs=1e-12), key
    lhs = expect["lhs_time"] + expect["lhs_initial"]
    rhs = sum(expect[k] for k in expect if k.startswith("rhs"))
    assert combine_terms(terms) == pytest.approx(lhs - rhs, rel=1e-7, abs=1e-12)


def test_coefficient_sign_flip_across_two():
    # the time coefficient -(m-1)/(m(m-2)) changes sign across m = 2
    u = [[1.0, 1.0]] * 3
    v = [[1.0, 1.0]] * 3
    phi = TestFunction((0,), 0.3, True, 0.0, 1.0)
    lo = residual_u_terms(_two_cell_trajectory(1.5, 0.25, u, v), phi)
    hi = residual_u_terms(_two_cell_trajectory(3.0, 0.25, u, v), phi)
    assert lo["lhs_initial"] > 0 > hi["lhs_initial"]


def test_epsilon_form_reduces_to_limit_form_below_truncation_as_eps_shrinks():
    u = [[1.0, 2.0], [1.3, 1.7], [0.6, 2.5]]
    v = [[2.0, 1.5], [1.8, 1.4], [1.6, 1.2]]
    phi = TestFunction((1,), 0.3, True, 1.0, 1.0)
    ref = residual_u(_two_cell_trajectory(3.0, 0.25, u, v), phi, limit_form=True)
    gaps = [abs(residual_u(_two_cell_trajectory(3.0, e, u, v), phi) - ref) for e in (0.1, 0.01, 0.001)]
    assert gaps[0] > gaps[1] > gaps[2]


# ------------------------------------------------------ trajectories/audits


@pytest.fixture(scope="module")
def homogeneous_traj():
    return run(make_config(params={"t_final": 0.5}, output={"snapshot_count": 200})).trajectory()


def test_homogeneous_k0_residuals(homogeneous_traj):
    tr = homogeneous_traj
    for T in (0.25, 0.5):
        phi = make_test_function(0, T, True, tr.grid, 0.5)
        assert abs(residual_u(tr, phi)) <= 1e-15
        assert abs(residual_v(tr, phi)) <= residual_tolerance(0.01, tr, phi)
        # m = 2: the identity holds for sign-free phi too
        phi_free = make_test_function(1, T, False, tr.grid, 0.5)
        assert abs(residual_u(tr, phi_free)) < 1e-14


def test_phi_zero_gives_zero_v_residual(homogeneous_traj):
    phi = TestFunction((0,), 0.5, False, -1.0, 1.0)  # -1 + cos(0) = 0
    assert residual_v(homogeneous_traj, phi) == 0.0


def test_inequality_branch_requires_nonneg(homogeneous_traj):
    tr = homogeneous_traj
    tr3 = Trajectory(tr.grid, tr.times, tr.u, tr.v, 3.0, tr.eps, tr.v0_max, tr.dt_max)
    with pytest.raises(ValueError, match="non-negative"):
        residual_u(tr3, make_test_function(1, 0.5, False, tr.grid))
    residual_u(tr3, make_test_function(1, 0.5, True, tr.grid))


def test_nonpositive_signal_rejected(homogeneous_traj):
    tr = homogeneous_traj
    v = tr.v.copy()
    v[3, 2] = 0.0
    bad = Trajectory(tr.grid, tr.times, tr.u, v, tr.m, tr.eps, tr.v0_max, tr.dt_max)
    phi = make_test_function(0, 0.5, True, tr.grid)
    with pytest.raises(ValueError):
        residual_u(bad, phi)
    with pytest.raises(ValueError):
        residual_v(bad, phi)


def test_mass_audit(homogeneous_traj):
    tr = homogeneous_traj
    assert mass_conservation_audit(tr) == 0.0
    single = Trajectory(tr.grid, tr.times[:1], tr.u[:1], tr.v[:1], tr.m, tr.eps, tr.v0_max, tr.dt_max)
    assert mass_conservation_audit(single) == 0.0
    u = tr.u.copy()
    u[-1, 0] *= 1.5
    corrupt = Trajectory(tr.grid, tr.times, u, tr.v, tr.m, tr.eps, tr.v0_max, tr.dt_max)
    assert mass_conservation_audit(corrupt) > 1e-3


@pytest.mark.parametrize("m", [3.0, 1.5])
def test_inequality_branch_on_gaussian_run(m):
    # degenerate diffusion relaxes the peak fast, so early snapshots are clustered
    cfg = make_config(grid={"cells": 32}, params={"m": m, "t_final": 0.25},
                      initial={"u0": GAUSS_U0, "v0": TILTED_V0},
                      output={"snapshot_count": 100, "snapshot_spacing": "geometric", "diagnostics_every": 10**6})
    tr = run(cfg).trajectory()
    entries = audit_trajectory(tr, 0.01)
    assert all(e["m_branch"] == "inequality" for e in entries)
    assert len(entries) == 13
    assert all(e["pass"] for e in entries), [e for e in entries if not e["pass"]]


def test_two_dimensional_v_residual_first_order():
    vals = []
    for n, ns in ((8, 50), (16, 100)):
        cfg = make_config(grid={"dim": 2, "cells": n}, params={"t_final": 0.05},
                          initial={"u0": {"kind": "gaussian", "amplitude": 3.0, "center": [0.5, 0.4], "width": 0.15},
                                   "v0": {"kind": "cosine_perturbation", "mean": 3.0, "amplitude": 0.5,
                                          "modes": [[1, 1]]}},
                          output={"snapshot_count": ns, "diagnostics_every": 10**6})
        tr = run(cfg).trajectory()
        phi = make_test_function((1, 1), 0.05, False, tr.grid)
        vals.append(abs(residual_v(tr, phi)))
    assert vals[0] / vals[1] >= 1.7
