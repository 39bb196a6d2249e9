"""Sparse direct solves with reusable factorizations.

The ensemble scheme assembles one coefficient matrix per sub-step and
reuses its factorization for all members' right-hand sides, so the solver
interface is factor-once / solve-many.  The default backend is UMFPACK
(via cvxopt), which handles the saddle-point systems with far less fill
than SuperLU; the symbolic analysis can additionally be reused across
time-steps because the sparsity pattern never changes.  SuperLU (scipy)
remains as a fallback backend.

Both backends are deterministic, and factorization objects are immutable,
so concurrent solves against one factorization are safe.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:
    from cvxopt import matrix as _cvx_matrix
    from cvxopt import spmatrix as _cvx_spmatrix
    from cvxopt import umfpack as _umfpack

    HAVE_UMFPACK = True
except ImportError:  # pragma: no cover - cvxopt is a declared dependency
    HAVE_UMFPACK = False


class SingularMatrixError(RuntimeError):
    """Raised when a factorization encounters an exactly singular matrix.

    For the saddle-point systems this usually means the pressure nullspace
    was not pinned or the Dirichlet set is empty.
    """


def _to_cvxopt(matrix: sp.spmatrix):
    coo = matrix.tocoo()
    return _cvx_spmatrix(
        coo.data, coo.row.astype(np.int64), coo.col.astype(np.int64), coo.shape
    )


class Factorization:
    """Reusable LU factorization of a square sparse matrix."""

    def __init__(self, shape, backend, handle, symbolic=None):
        self.shape = shape
        self.backend = backend
        self._handle = handle
        self.symbolic = symbolic

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve A x = b for a single right-hand side."""
        b = np.asarray(b, dtype=float)
        if b.shape != (self.shape[0],):
            raise ValueError(f"rhs shape {b.shape} does not match matrix size {self.shape[0]}")
        return self.solve_block(b[:, None])[:, 0]

    def solve_block(self, rhs_block: np.ndarray) -> np.ndarray:
        """Solve A X = B column by column; B has shape (n, ncols).

        Columns are independent, and the result is identical to stacking
        single solves (same code path per column).
        """
        rhs = np.asarray(rhs_block, dtype=float)
        if rhs.ndim != 2 or rhs.shape[0] != self.shape[0]:
            raise ValueError(f"rhs block shape {rhs.shape} does not match matrix size {self.shape[0]}")
        if self.backend == "umfpack":
            a_cvx, numeric = self._handle
            out = _cvx_matrix(rhs)
            _umfpack.solve(a_cvx, numeric, out)
            return np.asarray(out).reshape(rhs.shape)
        return self._handle.solve(rhs)


def factorize(matrix: sp.spmatrix, symbolic=None) -> Factorization:
    """Factorize a square sparse matrix for repeated solves.

    ``symbolic`` optionally reuses the symbolic analysis of a previous
    factorization with the same sparsity pattern (a large saving when the
    same operators are refactorized every time-step).  The input matrix is
    not modified.  Raises SingularMatrixError on exactly singular input.
    """
    if matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"matrix is not square: {matrix.shape}")
    if HAVE_UMFPACK:
        a_cvx = _to_cvxopt(matrix)
        try:
            if symbolic is None:
                symbolic = _umfpack.symbolic(a_cvx)
            numeric = _umfpack.numeric(a_cvx, symbolic)
        except ArithmeticError as exc:
            raise SingularMatrixError(f"UMFPACK: {exc}") from exc
        return Factorization(matrix.shape, "umfpack", (a_cvx, numeric), symbolic)

    try:
        lu = spla.splu(matrix.tocsc())
    except RuntimeError as exc:  # pragma: no cover - fallback path
        if "singular" in str(exc).lower():
            raise SingularMatrixError(str(exc)) from exc
        raise
    probe = lu.solve(np.ones(matrix.shape[0]))
    if not np.all(np.isfinite(probe)):  # pragma: no cover
        raise SingularMatrixError("matrix factorization produced non-finite factors")
    return Factorization(matrix.shape, "superlu", lu)


def relative_residual(matrix: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    """max-over-columns of ||A x - b|| / ||b|| (2-norm per column)."""
    r = matrix @ x - b
    if r.ndim == 1:
        denom = max(np.linalg.norm(b), np.finfo(float).tiny)
        return float(np.linalg.norm(r) / denom)
    denom = np.maximum(np.linalg.norm(b, axis=0), np.finfo(float).tiny)
    return float(np.max(np.linalg.norm(r, axis=0) / denom))
