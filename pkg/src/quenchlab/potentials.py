"""Double-well machinery: concave part, logarithmic deep-quench family, and
the Moreau-Yosida penalty that stands in for the double obstacle.

The potential is split as ``G(r) + F(r)`` with ``F(r) = c1 - c2 r²`` concave
and ``G`` convex: either ``α h(r)`` (:class:`LogQuench`) or the Moreau-Yosida
envelope of ``α h + I_[-1,1]`` at parameter ``ε`` (:class:`ObstaclePenalty`;
``α = 0`` gives the plain obstacle penalty).
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

LN2 = math.log(2.0)


class DomainError(ValueError):
    """Argument outside the domain of ``h`` or its derivatives."""


class NonConvergence(RuntimeError):
    """Scalar proximal solve did not converge."""


# --------------------------------------------------------------------------
# h and its derivatives
# --------------------------------------------------------------------------


def _as_array(r):
    arr = np.asarray(r, dtype=float)
    return arr, arr.ndim == 0


def h_value(r):
    """``(1+r)ln(1+r) + (1-r)ln(1-r)`` on ``[-1, 1]``; ``2 ln 2`` at ``±1``."""
    arr, scalar = _as_array(r)
    if np.any(np.abs(arr) > 1.0) or np.any(np.isnan(arr)):
        raise DomainError("h is +inf outside [-1, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (1.0 + arr) * np.log1p(arr) + (1.0 - arr) * np.log1p(-arr)
    out = np.where(np.abs(arr) == 1.0, 2.0 * LN2, out)
    return float(out) if scalar else out


def _check_open(arr):
    if np.any(np.abs(arr) >= 1.0) or np.any(np.isnan(arr)):
        raise DomainError("h' and h'' require |r| < 1")


def h_prime(r):
    arr, scalar = _as_array(r)
    _check_open(arr)
    out = np.log1p(arr) - np.log1p(-arr)
    return float(out) if scalar else out


def h_second(r):
    arr, scalar = _as_array(r)
    _check_open(arr)
    out = 2.0 / ((1.0 - arr) * (1.0 + arr))
    return float(out) if scalar else out


def moreau_yosida_prime(r, alpha, eps):
    """Derivative of the Moreau-Yosida envelope of ``α h + I_[-1,1]``.

    For ``alpha == 0`` this is the obstacle penalty ``(r - clamp(r, -1, 1))/eps``.
    For ``alpha > 0`` the proximal point ``s`` solves ``eps α h'(s) + s = r``
    and the derivative is ``(r - s)/eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    arr, scalar = _as_array(r)
    if alpha == 0:
        out = (arr - np.clip(arr, -1.0, 1.0)) / eps
    else:
        s = prox(arr, alpha, eps)
        out = (arr - s) / eps
    return float(out) if scalar else out


def prox(r, alpha, eps):
    """Proximal point of ``α h`` at parameter ``eps`` (elementwise)."""
    arr, scalar = _as_array(r)
    s, iters = kernels.prox_log(np.atleast_1d(arr), alpha, eps)
    if iters > kernels.PROX_MAX_ITER:
        raise NonConvergence(f"proximal solve exceeded {kernels.PROX_MAX_ITER} iterations")
    s = s.reshape(arr.shape)
    return float(s) if scalar else s


def moreau_yosida_value(r, alpha, eps):
    """Envelope value ``min_s α h(s) + (r - s)²/(2 eps)``."""
    arr, scalar = _as_array(r)
    if alpha == 0:
        out = (arr - np.clip(arr, -1.0, 1.0)) ** 2 / (2.0 * eps)
    else:
        s = np.asarray(prox(arr, alpha, eps))
        out = alpha * h_value(s) + (arr - s) ** 2 / (2.0 * eps)
    return float(out) if scalar else out


# --------------------------------------------------------------------------
# concave part and convex modes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConcavePart:
    """``F(r) = c1 - c2 r²``."""

    c1: float = 0.0
    c2: float = 1.0

    def __post_init__(self):
        if not self.c2 > 0:
            raise ValueError("c2 must be positive")

    def value(self, r):
        return self.c1 - self.c2 * np.asarray(r) ** 2

    def prime(self, r):
        return -2.0 * self.c2 * np.asarray(r, dtype=float)

    def second(self, r=None):
        return -2.0 * self.c2

    @property
    def lipschitz(self):
        return 2.0 * self.c2


# Module-level conveniences for the default concave part.
def f_prime(r, c2=1.0):
    return ConcavePart(c2=c2).prime(r)


def f_second(r, c2=1.0):
    return np.full(np.shape(r), -2.0 * c2) if np.ndim(r) else -2.0 * c2


@dataclass(frozen=True)
class LogQuench:
    alpha: float

    def __post_init__(self):
        if not (0 < self.alpha <= 1):
            raise ValueError(f"LogQuench needs alpha in (0, 1], got {self.alpha}")

    interior = True
    label = "log"

    def derivs(self, phi):
        """``(G'(phi), G''(phi))`` for ``G = α h``."""
        return kernels.log_derivs(phi, self.alpha)

    def with_eps(self, eps):
        return self


@dataclass(frozen=True)
class ObstaclePenalty:
    eps: float
    alpha: float = 0.0
    eps_schedule: tuple = ()

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("ObstaclePenalty needs eps > 0")
        if self.alpha < 0:
            raise ValueError("ObstaclePenalty needs alpha >= 0")

    interior = False
    label = "obstacle"

    @property
    def continuation(self):
        """Decreasing eps values ending at ``eps``."""
        sched = [e for e in self.eps_schedule if e > self.eps]
        return tuple(sorted(sched, reverse=True)) + (self.eps,)

    def with_eps(self, eps):
        return ObstaclePenalty(eps=eps, alpha=self.alpha)

    def derivs(self, phi):
        if self.alpha == 0:
            return kernels.penalty_derivs(phi, self.eps)
        s = np.asarray(prox(phi, self.alpha, self.eps))
        d1 = (phi - s) / self.eps
        # derivative of the envelope gradient: (1/eps)(1 - ds/dr), ds/dr = 1/(1 + eps α h''(s))
        hs = self.alpha * 2.0 / ((1.0 - s) * (1.0 + s))
        d2 = hs / (1.0 + self.eps * hs)
        return d1, d2


def obstacle_default(eps_final=1e-4):
    return ObstaclePenalty(eps=eps_final, alpha=0.0, eps_schedule=(1e-2, 1e-3))
