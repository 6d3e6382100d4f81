"""Symmetric positive definite solves with one step of iterative refinement.

All inverses in the estimators go through these helpers so that quantities
sharing a weight matrix are computed from the same factorization.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import SingularNormalMatrixError, SingularWeightError

#: Condition number beyond which a normal matrix is declared singular.
COND_LIMIT = 1e12


class PdSolver:
    """Cholesky factorization of a symmetric PD matrix with refined solves.

    Parameters
    ----------
    a : ndarray
        Symmetric positive definite matrix.
    name : str
        Label used in error messages.
    """

    def __init__(self, a: np.ndarray, name: str = "weight matrix"):
        a = np.asarray(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"{name} must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise SingularWeightError(f"{name} has non-finite entries")
        self.a = a
        try:
            self._factor = sla.cho_factor(a, lower=True, check_finite=False)
        except sla.LinAlgError as exc:
            raise SingularWeightError(
                f"{name} is not positive definite "
                f"(condition number {np.linalg.cond(a):.3e}): {exc}"
            ) from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve ``a x = b`` with one step of iterative refinement."""
        b = np.asarray(b, dtype=float)
        x = sla.cho_solve(self._factor, b, check_finite=False)
        r = b - self.a @ x
        return x + sla.cho_solve(self._factor, r, check_finite=False)

    def quad_form(self, v: np.ndarray) -> float:
        """Return ``v' a^-1 v`` for a vector ``v``."""
        return float(v @ self.solve(v))


def solve_normal(m: np.ndarray, b: np.ndarray, name: str = "normal matrix") -> np.ndarray:
    """Solve ``m x = b`` for a symmetric normal matrix, checking conditioning.

    Raises
    ------
    SingularNormalMatrixError
        If the condition number of ``m`` exceeds ``COND_LIMIT``.
    """
    m = np.asarray(m, dtype=float)
    cond = cond_sym(m)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularNormalMatrixError(
            f"{name} is numerically singular (condition number {cond:.3e})"
        )
    solver = PdSolver(m, name)
    return solver.solve(b)


def cond_sym(m: np.ndarray) -> float:
    """Condition number of a symmetric matrix from its eigenvalues."""
    w = np.abs(sla.eigvalsh(m, check_finite=False))
    lo = w.min()
    if lo == 0.0:
        return np.inf
    return float(w.max() / lo)


def inv_sym(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Inverse of a symmetric PD matrix through its Cholesky factor."""
    solver = PdSolver(m, name)
    out = solver.solve(np.eye(m.shape[0]))
    return 0.5 * (out + out.T)
