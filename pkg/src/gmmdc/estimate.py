"""Closed-form linear GMM solvers: one-step, two-step, and iterated."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ._linalg import COND_LIMIT, PdSolver, cond_sym
from .errors import SingularNormalMatrixError
from .linmoment import LinearMomentSystem, WeightSpec, moment_stats

#: Default relative convergence tolerance for the iterated estimator.
DEFAULT_TOL = 1e-8
#: Default iteration cap; iteration can cycle, so hitting it is a warning state.
DEFAULT_MAX_ITER = 1000


@dataclass(frozen=True)
class FitPlan:
    """Which estimator to run and with what weights.

    ``kind`` is one of ``"one-step"``, ``"two-step"``, ``"iterated"``.
    ``w0`` is the preliminary weight; efficient steps use the uncentered
    second-moment weight unless ``centered`` is set, in which case the
    centered weight (and its centered derivative) is used throughout.
    """

    kind: str
    w0: WeightSpec = field(default_factory=WeightSpec.data_average)
    centered: bool = False
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.kind not in ("one-step", "two-step", "iterated"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    @staticmethod
    def one_step(w0: Optional[WeightSpec] = None) -> "FitPlan":
        return FitPlan("one-step", w0 or WeightSpec.data_average())

    @staticmethod
    def two_step(w0: Optional[WeightSpec] = None, centered: bool = False) -> "FitPlan":
        return FitPlan("two-step", w0 or WeightSpec.data_average(), centered)

    @staticmethod
    def iterated(w0: Optional[WeightSpec] = None, centered: bool = False,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> "FitPlan":
        return FitPlan("iterated", w0 or WeightSpec.data_average(), centered, tol, max_iter)


@dataclass(frozen=True)
class FitStep:
    """One solve in the estimation chain: the estimate and the weight used."""

    theta: np.ndarray
    weight: np.ndarray


@dataclass(frozen=True)
class GmmFit:
    """A fitted linear GMM estimator.

    ``steps`` records the full chain of (estimate, weight matrix) pairs so
    the variance estimators can be assembled without refitting; the final
    entry's weight is the one the reported estimate minimizes against.
    """

    theta: np.ndarray
    steps: Tuple[FitStep, ...]
    g_n_hat: np.ndarray
    converged: bool
    iterations: int
    plan: FitPlan

    @property
    def k(self) -> int:
        return self.theta.shape[0]

    @property
    def final_weight(self) -> np.ndarray:
        return self.steps[-1].weight


def solve_weighted(sys: LinearMomentSystem, weight: np.ndarray) -> np.ndarray:
    """Minimize g_n(theta)' weight^-1 g_n(theta) in closed form.

    Returns theta = -(G_n' W^-1 G_n)^-1 G_n' W^-1 h_n via Cholesky solves
    with iterative refinement; no matrix is inverted explicitly.

    Raises
    ------
    SingularWeightError
        If ``weight`` is not positive definite.
    SingularNormalMatrixError
        If G_n' W^-1 G_n has condition number above 1e12.
    """
    h_n = sys.h.mean(axis=0)
    G_n = sys.G_obs.mean(axis=0)
    solver = PdSolver(np.asarray(weight, dtype=float), "weight matrix")
    return _solve_weighted(h_n, G_n, solver)


def _solve_weighted(h_n: np.ndarray, G_n: np.ndarray, solver: PdSolver) -> np.ndarray:
    aG = solver.solve(G_n)
    m = G_n.T @ aG
    m = 0.5 * (m + m.T)
    cond = cond_sym(m)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularNormalMatrixError(
            f"G_n' W^-1 G_n is numerically singular (condition number {cond:.3e})"
        )
    rhs = aG.T @ h_n
    msolver = PdSolver(m, "normal matrix")
    return -msolver.solve(rhs)


def fit(sys: LinearMomentSystem, plan: FitPlan) -> GmmFit:
    """Run the one-step, two-step, or iterated GMM estimator.

    The two-step estimator reweights with the second-moment matrix evaluated
    at the one-step estimate; the iterated estimator repeats that update from
    the one-step estimate until the step size falls below
    ``tol * (1 + ||previous||)`` or ``max_iter`` is hit. Non-convergence is
    reported through ``converged=False`` (with a warning), not an error.
    """
    h_n = sys.h.mean(axis=0)
    G_n = sys.G_obs.mean(axis=0)
    w0 = sys.weight_matrix(plan.w0)
    theta1 = _solve_weighted(h_n, G_n, PdSolver(w0, "preliminary weight"))
    steps = [FitStep(theta1, w0)]

    if plan.kind == "one-step":
        theta, converged = theta1, True
    else:
        max_updates = 1 if plan.kind == "two-step" else plan.max_iter
        theta_prev = theta1
        converged = plan.kind == "two-step"
        for _ in range(max_updates):
            stats = moment_stats(sys, theta_prev)
            omega = stats.Omega_c if plan.centered else stats.Omega
            theta = _solve_weighted(h_n, G_n, PdSolver(omega, "efficient weight"))
            steps.append(FitStep(theta, omega))
            if plan.kind == "iterated":
                if np.linalg.norm(theta - theta_prev) < plan.tol * (1 + np.linalg.norm(theta_prev)):
                    converged = True
                    break
            theta_prev = theta
        if plan.kind == "iterated" and not converged:
            warnings.warn(
                f"iterated GMM did not converge within {plan.max_iter} updates; "
                "returning the last iterate",
                RuntimeWarning,
                stacklevel=2,
            )

    return GmmFit(
        theta=theta,
        steps=tuple(steps),
        g_n_hat=h_n + G_n @ theta,
        converged=converged,
        iterations=len(steps),
        plan=plan,
    )
