"""Cut-off, truncated sensitivity, shifted diffusivity and the log substitution.

The scalar kernels (``_rho``, ``_f_eps`` ...) are compiled with numba and are
called directly from the stepper loops; the public functions wrap them for
scalars and arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

# cumulative integral of rho over [1, 2]: 128 panels, 8-point Gauss-Legendre each
_N_PANELS = 128
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@numba.njit(cache=True)
def _bump_g(t):
    if t <= 0.0:
        return 0.0
    return math.exp(-1.0 / t)


@numba.njit(cache=True)
def _rho(s):
    if s <= 1.0:
        return 1.0
    if s >= 2.0:
        return 0.0
    a = _bump_g(2.0 - s)
    b = _bump_g(s - 1.0)
    return a / (a + b)


@numba.njit(cache=True)
def _gl_rho(a, b, gx, gw):
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    acc = 0.0
    for i in range(gx.shape[0]):
        acc += gw[i] * _rho(mid + half * gx[i])
    return acc * half


def _build_table() -> np.ndarray:
    nodes = 1.0 + np.arange(_N_PANELS + 1) / _N_PANELS
    table = np.zeros(_N_PANELS + 1)
    for j in range(_N_PANELS):
        table[j + 1] = table[j] + _gl_rho(nodes[j], nodes[j + 1], _GL_X, _GL_W)
    table.setflags(write=False)
    return table


_RHO_CUMULATIVE = _build_table()


@numba.njit(cache=True)
def _rho_integral(x):
    """Integral of rho over [1, x] for x in [1, 2]."""
    if x <= 1.0:
        return 0.0
    if x >= 2.0:
        return _RHO_CUMULATIVE[_N_PANELS]
    pos = (x - 1.0) * _N_PANELS
    j = int(pos)
    if j >= _N_PANELS:
        j = _N_PANELS - 1
    x0 = 1.0 + j / _N_PANELS
    return _RHO_CUMULATIVE[j] + _gl_rho(x0, x, _GL_X, _GL_W)


@numba.njit(cache=True)
def _f_eps(s, eps):
    if s * eps <= 1.0:
        return s
    return (1.0 + _rho_integral(eps * s)) / eps


@numba.njit(cache=True)
def _f_eps_prime(s, eps):
    return _rho(eps * s)


@numba.njit(cache=True)
def _d_eps(s, m, eps):
    return m * (s + eps) ** (m - 1.0)


@numba.vectorize(["float64(float64)"], cache=True)
def _rho_ufunc(s):
    return _rho(s)


@numba.vectorize(["float64(float64, float64)"], cache=True)
def _f_eps_ufunc(s, eps):
    return _f_eps(s, eps)


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def _nonneg(s, name="s"):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise ValueError(f"{name} must be finite and non-negative")
    return s


def _check_eps(eps):
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")


def rho(s):
    """Smooth nonincreasing cut-off: 1 on [0, 1], 0 on [2, inf)."""
    return _scalar_or_array(_rho_ufunc(_nonneg(s)))


def f_eps(s, eps):
    """Truncated identity ``int_0^s rho(eps sigma) dsigma``."""
    _check_eps(eps)
    return _scalar_or_array(_f_eps_ufunc(_nonneg(s), float(eps)))


def f_eps_prime(s, eps):
    _check_eps(eps)
    return _scalar_or_array(_rho_ufunc(float(eps) * _nonneg(s)))


def d_eps(s, m, eps):
    """Shifted porous-medium diffusivity ``m (s + eps)^(m-1)``.

    ``eps = 0`` is accepted here so the unshifted law can be evaluated.
    """
    s = _nonneg(s)
    return _scalar_or_array(m * (s + eps) ** (m - 1.0))


def w_of_v(v, v0_max):
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("v must be finite and strictly positive")
    return _scalar_or_array(-np.log(v / v0_max))


def v_of_w(w, v0_max):
    return _scalar_or_array(v0_max * np.exp(-np.asarray(w, dtype=float)))


def critical_exponent(dim: int) -> float:
    """Threshold on m above which global generalized solutions are known."""
    return 1.0 + (dim - 2) / (2.0 * dim)


def default_p(dim: int) -> float:
    """Lebesgue exponent used for the ``(u+eps)^(m-1)`` diagnostic."""
    if dim <= 2:
        return 4.0
    return 2.0 * dim / (dim - 2)


@dataclass(frozen=True)
class Params:
    m: float
    eps: float
    dim: int
    v0_max: float
    lam: float
    t_final: float
    cfl_safety: float = 0.4
    p_diag: float = 4.0
    int_w0: float = 0.0
    v0_min: float | None = None
    u0_max: float = 0.0

    def __post_init__(self):
        if not self.m > 1:
            raise ValueError(f"m must exceed 1, got {self.m}")
        _check_eps(self.eps)
        if not self.lam > 0:
            raise ValueError(f"lam (initial mass) must be positive, got {self.lam}")
        if not self.v0_max > 0:
            raise ValueError(f"v0_max must be positive, got {self.v0_max}")
        if not 0 < self.cfl_safety < 1:
            raise ValueError(f"cfl_safety must lie in (0, 1), got {self.cfl_safety}")
        if not self.t_final > 0:
            raise ValueError(f"t_final must be positive, got {self.t_final}")

    @property
    def c1(self) -> float:
        """Pointwise bound ``max(||u0||_inf, 2/eps)`` on the regularized density."""
        return max(self.u0_max, 2.0 / self.eps)

    @property
    def supercritical(self) -> bool:
        return self.m > critical_exponent(self.dim)
