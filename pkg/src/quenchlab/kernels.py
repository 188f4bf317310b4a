"""Hot per-cell kernels.

Every kernel exists twice: a numba ``@njit`` loop and a vectorized numpy
version. The public names at the bottom of this module are bound to one of
them according to :data:`quenchlab._backend.USE_NUMBA`; both variants stay
importable so tests and ``benchmarks/bench_kernels.py`` can compare them.
"""

import math

import numpy as np

from ._backend import USE_NUMBA, njit

# Newton iterations allowed in the scalar proximal solve before giving up.
PROX_MAX_ITER = 100


# --------------------------------------------------------------------------
# 5-point Neumann Laplacian (mirror ghost cells)
# --------------------------------------------------------------------------


def laplacian_numpy(v, hx, hy):
    p = np.pad(v, 1, mode="edge")
    return (p[2:, 1:-1] - 2.0 * v + p[:-2, 1:-1]) / (hx * hx) + (
        p[1:-1, 2:] - 2.0 * v + p[1:-1, :-2]
    ) / (hy * hy)


@njit(cache=True)
def laplacian_numba(v, hx, hy):
    nx, ny = v.shape
    out = np.empty_like(v)
    cx = 1.0 / (hx * hx)
    cy = 1.0 / (hy * hy)
    for i in range(nx):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < nx - 1 else nx - 1
        for j in range(ny):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < ny - 1 else ny - 1
            c = v[i, j]
            out[i, j] = (v[ip, j] - 2.0 * c + v[im, j]) * cx + (
                v[i, jp] - 2.0 * c + v[i, jm]
            ) * cy
    return out


# --------------------------------------------------------------------------
# Logarithmic convex part h(r) = (1+r)ln(1+r) + (1-r)ln(1-r), scaled by alpha
# --------------------------------------------------------------------------


def log_derivs_numpy(phi, alpha):
    d1 = alpha * (np.log1p(phi) - np.log1p(-phi))
    d2 = 2.0 * alpha / ((1.0 - phi) * (1.0 + phi))
    return d1, d2


@njit(cache=True)
def log_derivs_numba(phi, alpha):
    d1 = np.empty_like(phi)
    d2 = np.empty_like(phi)
    flat = phi.reshape(phi.size)
    o1 = d1.reshape(phi.size)
    o2 = d2.reshape(phi.size)
    for k in range(flat.size):
        r = flat[k]
        o1[k] = alpha * (math.log1p(r) - math.log1p(-r))
        o2[k] = 2.0 * alpha / ((1.0 - r) * (1.0 + r))
    return d1, d2


# --------------------------------------------------------------------------
# Obstacle penalty (1/eps)(r - clamp(r, -1, 1)) and its generalized derivative
# --------------------------------------------------------------------------


def penalty_derivs_numpy(phi, eps):
    excess = phi - np.clip(phi, -1.0, 1.0)
    d2 = np.where(excess != 0.0, 1.0 / eps, 0.0)
    return excess / eps, d2


@njit(cache=True)
def penalty_derivs_numba(phi, eps):
    d1 = np.empty_like(phi)
    d2 = np.empty_like(phi)
    flat = phi.reshape(phi.size)
    o1 = d1.reshape(phi.size)
    o2 = d2.reshape(phi.size)
    inv = 1.0 / eps
    for k in range(flat.size):
        r = flat[k]
        if r > 1.0:
            o1[k] = (r - 1.0) * inv
            o2[k] = inv
        elif r < -1.0:
            o1[k] = (r + 1.0) * inv
            o2[k] = inv
        else:
            o1[k] = 0.0
            o2[k] = 0.0
    return d1, d2


# --------------------------------------------------------------------------
# Proximal map of alpha*h at parameter eps:
#   s solves  eps*alpha*h'(s) + s - r = 0,  s in (-1, 1)
# Safeguarded Newton: bisection whenever the Newton iterate leaves the bracket.
# Returns (s, iterations); iterations > PROX_MAX_ITER flags failure.
# --------------------------------------------------------------------------


@njit(cache=True)
def _prox_scalar(r, alpha, eps):
    c = eps * alpha
    lo = -1.0
    hi = 1.0
    s = min(max(r, -0.5), 0.5)
    for it in range(1, PROX_MAX_ITER + 1):
        g = c * (math.log1p(s) - math.log1p(-s)) + s - r
        if g > 0.0:
            hi = s
        else:
            lo = s
        dg = c * 2.0 / ((1.0 - s) * (1.0 + s)) + 1.0
        s_new = s - g / dg
        if not (lo < s_new < hi):
            s_new = 0.5 * (lo + hi)
        if abs(s_new - s) <= 4e-16 * (1.0 + abs(s)) or hi - lo <= 4e-16:
            return s_new, it
        s = s_new
    return s, PROX_MAX_ITER + 1


@njit(cache=True)
def prox_log_numba(r, alpha, eps):
    out = np.empty_like(r)
    flat = r.reshape(r.size)
    o = out.reshape(r.size)
    worst = 0
    for k in range(flat.size):
        s, it = _prox_scalar(flat[k], alpha, eps)
        o[k] = s
        if it > worst:
            worst = it
    return out, worst


def prox_log_numpy(r, alpha, eps):
    r = np.asarray(r, dtype=float)
    c = eps * alpha
    lo = np.full(r.shape, -1.0)
    hi = np.full(r.shape, 1.0)
    s = np.clip(r, -0.5, 0.5)
    active = np.ones(r.shape, dtype=bool)
    it = 0
    while active.any():
        it += 1
        if it > PROX_MAX_ITER:
            return s, PROX_MAX_ITER + 1
        sa = s[active]
        g = c * (np.log1p(sa) - np.log1p(-sa)) + sa - r[active]
        lo_a = np.where(g > 0.0, lo[active], sa)
        hi_a = np.where(g > 0.0, sa, hi[active])
        dg = c * 2.0 / ((1.0 - sa) * (1.0 + sa)) + 1.0
        s_new = sa - g / dg
        outside = ~((lo_a < s_new) & (s_new < hi_a))
        s_new[outside] = 0.5 * (lo_a[outside] + hi_a[outside])
        done = (np.abs(s_new - sa) <= 4e-16 * (1.0 + np.abs(sa))) | (hi_a - lo_a <= 4e-16)
        lo[active] = lo_a
        hi[active] = hi_a
        s[active] = s_new
        idx = np.flatnonzero(active.ravel())
        active.ravel()[idx[done]] = False
    return s, it


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


if USE_NUMBA:

    def laplacian(v, hx, hy):
        return laplacian_numba(_c(v), float(hx), float(hy))

    def log_derivs(phi, alpha):
        return log_derivs_numba(_c(phi), float(alpha))

    def penalty_derivs(phi, eps):
        return penalty_derivs_numba(_c(phi), float(eps))

    def prox_log(r, alpha, eps):
        return prox_log_numba(_c(r), float(alpha), float(eps))

else:
    laplacian = laplacian_numpy
    log_derivs = log_derivs_numpy
    penalty_derivs = penalty_derivs_numpy
    prox_log = prox_log_numpy
