"""Compiled face/cell loops shared by the (u, v) and (u, w) integrators.

All kernels take fields padded to three axes ``(nx, ny, nz)``; axes of
length one simply have no interior faces, so one code path serves 1D and 2D.
Face arrays include the boundary faces, which always hold zero.
"""
import math

import numba
import numpy as np

from .regularization import _d_eps, _f_eps, _f_eps_prime


@numba.njit(cache=True, inline="always")
def _face_flux(uL, uR, qL, qR, h, m, eps, wform):
    D = _d_eps(0.5 * (uL + uR), m, eps)
    if wform:
        c = -(qR - qL) / h
    else:
        vf = 0.5 * (qL + qR)
        if not vf > 0.0:
            raise FloatingPointError("non-positive face value of v")
        c = (qR - qL) / (h * vf)
    if c > 0.0:
        mob = uL * _f_eps_prime(uL, eps)
    else:
        mob = uR * _f_eps_prime(uR, eps)
    return D * (uR - uL) / h - mob * c


@numba.njit(cache=True)
def fluxes(u, q, h, m, eps, wform):
    nx, ny, nz = u.shape
    fx = np.zeros((nx + 1, ny, nz))
    fy = np.zeros((nx, ny + 1, nz))
    fz = np.zeros((nx, ny, nz + 1))
    for i in range(1, nx):
        for j in range(ny):
            for k in range(nz):
                fx[i, j, k] = _face_flux(u[i - 1, j, k], u[i, j, k], q[i - 1, j, k], q[i, j, k], h, m, eps, wform)
    for i in range(nx):
        for j in range(1, ny):
            for k in range(nz):
                fy[i, j, k] = _face_flux(u[i, j - 1, k], u[i, j, k], q[i, j - 1, k], q[i, j, k], h, m, eps, wform)
    for i in range(nx):
        for j in range(ny):
            for k in range(1, nz):
                fz[i, j, k] = _face_flux(u[i, j, k - 1], u[i, j, k], q[i, j, k - 1], q[i, j, k], h, m, eps, wform)
    return fx, fy, fz


@numba.njit(cache=True)
def update_u(u, fx, fy, fz, dt, h):
    nx, ny, nz = u.shape
    out = np.empty_like(u)
    r = dt / h
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                net = (fx[i + 1, j, k] - fx[i, j, k]) + (fy[i, j + 1, k] - fy[i, j, k]) + (fz[i, j, k + 1] - fz[i, j, k])
                out[i, j, k] = u[i, j, k] + r * net
    return out


@numba.njit(cache=True)
def laplacian(q, h):
    """Cell Laplacian with zero-flux boundary faces."""
    nx, ny, nz = q.shape
    out = np.zeros_like(q)
    ih2 = 1.0 / (h * h)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = q[i, j, k]
                acc = 0.0
                if i > 0:
                    acc += q[i - 1, j, k] - c
                if i < nx - 1:
                    acc += q[i + 1, j, k] - c
                if j > 0:
                    acc += q[i, j - 1, k] - c
                if j < ny - 1:
                    acc += q[i, j + 1, k] - c
                if k > 0:
                    acc += q[i, j, k - 1] - c
                if k < nz - 1:
                    acc += q[i, j, k + 1] - c
                out[i, j, k] = acc * ih2
    return out


@numba.njit(cache=True)
def update_v(u, v, dt, h, eps):
    lap = laplacian(v, h)
    out = np.empty_like(v)
    nx, ny, nz = v.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                vs = v[i, j, k] + dt * lap[i, j, k]
                out[i, j, k] = vs * math.exp(-_f_eps(u[i, j, k], eps) * dt)
    return out


@numba.njit(cache=True)
def grad_sq_cell_average(w, h):
    """Per-cell sum over axes of the mean of the two adjacent squared face gradients."""
    nx, ny, nz = w.shape
    out = np.zeros_like(w)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                c = w[i, j, k]
                acc = 0.0
                if i > 0:
                    acc += (c - w[i - 1, j, k]) ** 2
                if i < nx - 1:
                    acc += (w[i + 1, j, k] - c) ** 2
                if j > 0:
                    acc += (c - w[i, j - 1, k]) ** 2
                if j < ny - 1:
                    acc += (w[i, j + 1, k] - c) ** 2
                if k > 0:
                    acc += (c - w[i, j, k - 1]) ** 2
                if k < nz - 1:
                    acc += (w[i, j, k + 1] - c) ** 2
                out[i, j, k] = 0.5 * acc / (h * h)
    return out


@numba.njit(cache=True)
def update_w(u, w, dt, h, eps):
    lap = laplacian(w, h)
    g2 = grad_sq_cell_average(w, h)
    out = np.empty_like(w)
    nx, ny, nz = w.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                out[i, j, k] = w[i, j, k] + dt * (lap[i, j, k] - g2[i, j, k] + _f_eps(u[i, j, k], eps))
    return out


@numba.njit(cache=True)
def cfl_extrema(u, q, h, m, eps, wform):
    """Largest cell diffusivity and largest interior-face drift speed."""
    nx, ny, nz = u.shape
    max_d = 0.0
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                d = _d_eps(u[i, j, k], m, eps)
                if d > max_d:
                    max_d = d
    max_c = 0.0
    for axis in range(3):
        di = 1 if axis == 0 else 0
        dj = 1 if axis == 1 else 0
        dk = 1 if axis == 2 else 0
        for i in range(nx - di):
            for j in range(ny - dj):
                for k in range(nz - dk):
                    qL = q[i, j, k]
                    qR = q[i + di, j + dj, k + dk]
                    if wform:
                        c = abs(qR - qL) / h
                    else:
                        c = abs(qR - qL) / (h * 0.5 * (qL + qR))
                    if c > max_c:
                        max_c = c
    return max_d, max_c


@numba.njit(cache=True)
def diagnostic_sums(u, v, v0_max, m, eps, p, h, basis):
    """Fused per-step diagnostics; ``basis`` has shape (J, nx, ny, nz).

    Returns (sum u, sum w, face sum |dw|^2, face sum |dU|^2, sum U^p,
    min v, max v, per-mode sums U psi_j) with U = (u + eps)^(m-1); the
    caller applies the h-dependent weights.
    """
    nx, ny, nz = u.shape
    U = np.empty_like(u)
    w = np.empty_like(u)
    su = 0.0
    sw = 0.0
    sup = 0.0
    vmin = np.inf
    vmax = -np.inf
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                uu = u[i, j, k]
                vv = v[i, j, k]
                Uc = (uu + eps) ** (m - 1.0)
                U[i, j, k] = Uc
                wc = -math.log(vv / v0_max)
                w[i, j, k] = wc
                su += uu
                sw += wc
                sup += abs(Uc) ** p
                if vv < vmin:
                    vmin = vv
                if vv > vmax:
                    vmax = vv
    gw = 0.0
    gU = 0.0
    for axis in range(3):
        di = 1 if axis == 0 else 0
        dj = 1 if axis == 1 else 0
        dk = 1 if axis == 2 else 0
        for i in range(nx - di):
            for j in range(ny - dj):
                for k in range(nz - dk):
                    a = w[i + di, j + dj, k + dk] - w[i, j, k]
                    b = U[i + di, j + dj, k + dk] - U[i, j, k]
                    gw += a * a
                    gU += b * b
    nb = basis.shape[0]
    pair = np.zeros(nb)
    for q in range(nb):
        acc = 0.0
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    acc += U[i, j, k] * basis[q, i, j, k]
        pair[q] = acc
    ih2 = 1.0 / (h * h)
    return su, sw, gw * ih2, gU * ih2, sup, vmin, vmax, pair


@numba.njit(cache=True)
def stable_dt(u, q, h, dim, m, eps, safety, wform):
    max_d, max_c = cfl_extrema(u, q, h, m, eps, wform)
    rate = 2.0 * dim * (max_d / (h * h) + max_c / h)
    dt = h * h
    if rate > 0.0 and 1.0 / rate < dt:
        dt = 1.0 / rate
    dt *= safety
    cap = h * h / (2.0 * dim)
    return dt if dt < cap else cap


# status codes returned by step_uv / segment
OK = 0
NEG_U = 1
NONPOS_V = 2
BAD_FACE = 3
DT_FIXED_UNSTABLE = 4
NONFINITE = 5


@numba.njit(cache=True)
def step_uv(u, v, dt, h, m, eps, neg_tol):
    """One (u, v) step; returns (u_new, v_new, status, flat index of offending cell)."""
    nx, ny, nz = u.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not math.isfinite(u[i, j, k]) or not math.isfinite(v[i, j, k]):
                    return u, v, NONFINITE, (i * ny + j) * nz + k
    # face means of v must be positive before the flux kernel divides by them
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not v[i, j, k] > 0.0:
                    return u, v, BAD_FACE, (i * ny + j) * nz + k
    fx, fy, fz = fluxes(u, v, h, m, eps, False)
    u_new = update_u(u, fx, fy, fz, dt, h)
    v_new = update_v(u, v, dt, h, eps)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not u_new[i, j, k] >= -neg_tol:
                    return u_new, v_new, NEG_U, (i * ny + j) * nz + k
                if not v_new[i, j, k] > 0.0:
                    return u_new, v_new, NONPOS_V, (i * ny + j) * nz + k
                if not math.isfinite(u_new[i, j, k]):
                    return u_new, v_new, NONFINITE, (i * ny + j) * nz + k
    return u_new, v_new, OK, -1


@numba.njit(cache=True)
def segment(u, v, t, t_stop, max_steps, dt_forced, dt_fixed, h, dim, m, eps, safety, neg_tol,
            v0_max, v0_min, c1, lam, p, basis, inst, cum, stats):
    """Advance up to ``max_steps`` steps or until ``t_stop`` is reached.

    ``inst`` holds the instantaneous diagnostics of the current state
    ``[mass, int_w, |grad w|^2, |grad U|^2, ||U||_p, vmin, vmax, pairings...]``
    (already volume weighted) and ``cum`` the cumulative integrals
    ``[grad w, grad U, L^p, dual pairings...]``; both are updated in place.
    ``stats`` = ``[steps, dt_min, dt_max, max mass deviation, bound
    violations, max u]`` is updated in place.

    ``dt_forced > 0`` imposes the step size (lockstep drivers); otherwise the
    stable step, or ``dt_fixed > 0`` after checking it against the stable step.
    Returns (u, v, t, landed, status, bad_index).
    """
    vol = h ** dim
    nb = basis.shape[0]
    for _ in range(max_steps):
        if dt_forced > 0.0:
            dt = dt_forced
        else:
            dt = stable_dt(u, v, h, dim, m, eps, safety, False)
            if dt_fixed > 0.0:
                if dt_fixed > dt:
                    return u, v, t, False, DT_FIXED_UNSTABLE, -1
                dt = dt_fixed
        remaining = t_stop - t
        landed = dt >= remaining * (1.0 - 1e-9)
        if landed:
            dt = remaining
        u_new, v_new, status, bad = step_uv(u, v, dt, h, m, eps, neg_tol)
        if status != OK:
            return u, v, t, False, status, bad
        t = t_stop if landed else t + dt
        su, sw, gw, gU, sup, vmin, vmax, pair = diagnostic_sums(u_new, v_new, v0_max, m, eps, p, h, basis)
        gw *= vol
        gU *= vol
        lp = (sup * vol) ** (1.0 / p)
        cum[0] += 0.5 * dt * (inst[2] + gw)
        cum[1] += 0.5 * dt * (inst[3] + gU)
        cum[2] += 0.5 * dt * (inst[4] + lp)
        for q in range(nb):
            pv = pair[q] * vol
            cum[3 + q] += abs(pv - inst[7 + q])
            inst[7 + q] = pv
        mass = su * vol
        inst[0] = mass
        inst[1] = sw * vol
        inst[2] = gw
        inst[3] = gU
        inst[4] = lp
        inst[5] = vmin
        inst[6] = vmax
        stats[0] += 1.0
        if dt < stats[1]:
            stats[1] = dt
        if dt > stats[2]:
            stats[2] = dt
        dev = abs(mass - lam) / lam
        if dev > stats[3]:
            stats[3] = dev
        floor = v0_min * math.exp(-c1 * t)
        if not vmin > 0.0:
            stats[4] += 1.0
        if not vmax <= v0_max:
            stats[4] += 1.0
        if not vmin >= floor:
            stats[4] += 1.0
        umax = np.max(u_new)
        if umax > stats[5]:
            stats[5] = umax
        u = u_new
        v = v_new
        if landed:
            return u, v, t, True, OK, -1
    return u, v, t, False, OK, -1
