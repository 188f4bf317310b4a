"""Solvers for the zero-mean SPD systems shared by the state and adjoint steps.

Both the Newton linearization of the Cahn-Hilliard sub-step and the (p, q)
block of the adjoint step reduce, on mean-free fields, to

    (a N + K + P D P) x = b,        K = -Δ_h,  N = K^+,  P = I - mean,

with a diagonal ``D``. The operator is applied matrix-free with DCTs and
solved by conjugate gradients, preconditioned by the same operator with ``D``
replaced by its spatial mean. When ``D`` varies strongly (deep quench near
the pure phases, the obstacle penalty) that preconditioner degrades, so such
systems, and any system on which CG stalls, go to the equivalent sparse system
``(a I + K² + K D) x = K b``, factorized directly and polished by one step of
iterative refinement.
"""

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import dct, idct

log = logging.getLogger(__name__)


class LinearSolveFailure(RuntimeError):
    pass


def _center(x):
    return x - x.mean()


def neumann_matrix(grid):
    """Sparse ``K = -Δ_h`` (row-major flattening of ``(nx, ny)`` fields)."""

    def one_d(n, h):
        main = np.full(n, 2.0)
        main[0] = main[-1] = 1.0
        off = -np.ones(n - 1)
        return sp.diags([off, main, off], [-1, 0, 1]) / (h * h)

    kx = one_d(grid.nx, grid.hx)
    ky = one_d(grid.ny, grid.hy)
    return (sp.kron(kx, sp.identity(grid.ny)) + sp.kron(sp.identity(grid.nx), ky)).tocsr()


#: spread of ``D``, relative to the smallest preconditioner eigenvalue, beyond
#: which the direct solver is used up front
DIRECT_SPREAD = 10.0


class ZeroMeanSystem:
    """``(a N + K + P D P)`` on mean-free fields of ``grid``."""

    def __init__(self, grid, a, d):
        self.grid = grid
        self.a = float(a)
        self.d = np.asarray(d, dtype=float)
        lam = grid.symbol
        safe = np.where(lam > 0, lam, 1.0)
        self._op_diag = np.where(lam > 0, self.a / safe + lam, 0.0)
        pre = self._op_diag + self.d.mean()
        floor = 1e-12 * max(1.0, float(pre.max()))
        self._pre_inv = np.where(lam > 0, 1.0 / np.maximum(pre, floor), 0.0)
        pmin = float(np.maximum(pre, floor)[lam > 0].min()) if np.any(lam > 0) else 1.0
        self.spread = float(np.ptp(self.d)) / pmin

    def apply(self, x):
        x = x.reshape(self.grid.shape)
        y = idct(self._op_diag * dct(x)) + _center(self.d * x)
        return y.ravel()

    def precondition(self, x):
        return idct(self._pre_inv * dct(x.reshape(self.grid.shape))).ravel()

    def solve(self, b, rtol=1e-11, maxiter=400):
        """Return ``(x, iterations, method)``; ``b`` must be mean free."""
        n = self.grid.nx * self.grid.ny
        b = _center(np.asarray(b, dtype=float)).ravel()
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return np.zeros(self.grid.shape), 0, "trivial"
        if self.spread > DIRECT_SPREAD:
            return self._direct(b), 0, "lu"
        A = spla.LinearOperator((n, n), matvec=self.apply, dtype=float)
        M = spla.LinearOperator((n, n), matvec=self.precondition, dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1

        # rounding-level right-hand sides can break down CG; LU handles them
        with np.errstate(invalid="ignore", divide="ignore"):
            x, info = spla.cg(A, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
        if info == 0 and np.all(np.isfinite(x)):
            return _center(x).reshape(self.grid.shape), count[0], "cg"
        log.debug("CG stalled after %d iterations, switching to sparse LU", count[0])
        return self._direct(b), count[0], "lu"

    def _direct(self, b):
        grid = self.grid
        K = neumann_matrix(grid)
        n = grid.nx * grid.ny
        J = (self.a * sp.identity(n) + K @ K + K @ sp.diags(self.d.ravel())).tocsc()
        try:
            lu = spla.splu(J)
            x = lu.solve(K @ b)
            x = _center(x)
            x = x + lu.solve(K @ (b - self.apply(x)))
        except RuntimeError as exc:  # singular factor
            raise LinearSolveFailure(str(exc)) from exc
        if not np.all(np.isfinite(x)):
            raise LinearSolveFailure("non-finite solution from sparse LU")
        return _center(x).reshape(grid.shape)
