"""Linear-in-parameter moment condition systems.

A system stores, per observation unit i, the constant ``h_i`` and Jacobian
``G_i`` of a moment function that is exactly linear in the parameter:

    g_i(theta) = h_i + G_i theta.

Builders are provided for cross-sectional IV data and for balanced dynamic
panels estimated by first-differenced GMM (one moment block per individual,
so the observation unit for panels is the individual and every n-denominated
formula downstream uses N).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from ._linalg import COND_LIMIT
from .errors import SingularWeightError


class WeightKind(Enum):
    """Supported one-step / preliminary weight matrix choices."""

    IDENTITY = "identity"
    DATA_AVERAGE = "data-average"
    EFFICIENT = "efficient"
    EFFICIENT_CENTERED = "efficient-centered"


@dataclass(frozen=True)
class WeightSpec:
    """A weight matrix specification.

    ``IDENTITY`` is the q x q identity; ``DATA_AVERAGE`` is the mean of the
    per-observation contributions ``W(X_i)`` stored on the system (e.g.
    Z_i Z_i' for IV, Z_i' H Z_i for difference GMM); the efficient kinds are
    the (un)centered second-moment matrix of g_i evaluated at ``theta``.
    """

    kind: WeightKind
    theta: Optional[np.ndarray] = None

    def __post_init__(self):
        needs_theta = self.kind in (WeightKind.EFFICIENT, WeightKind.EFFICIENT_CENTERED)
        if needs_theta and self.theta is None:
            raise ValueError(f"{self.kind.value} weight requires an evaluation point")
        if not needs_theta and self.theta is not None:
            raise ValueError(f"{self.kind.value} weight takes no evaluation point")

    @staticmethod
    def identity() -> "WeightSpec":
        return WeightSpec(WeightKind.IDENTITY)

    @staticmethod
    def data_average() -> "WeightSpec":
        return WeightSpec(WeightKind.DATA_AVERAGE)

    @staticmethod
    def efficient_uncentered(theta) -> "WeightSpec":
        if theta is None:
            raise ValueError("efficient weight requires an evaluation point")
        return WeightSpec(WeightKind.EFFICIENT, np.asarray(theta, dtype=float))

    @staticmethod
    def efficient_centered(theta) -> "WeightSpec":
        if theta is None:
            raise ValueError("efficient weight requires an evaluation point")
        return WeightSpec(WeightKind.EFFICIENT_CENTERED, np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class LinearMomentSystem:
    """Per-observation moment constants and Jacobians of a linear GMM model.

    Attributes
    ----------
    h : ndarray, shape (n, q)
        Moment function at theta = 0, one row per observation unit.
    G_obs : ndarray, shape (n, q, k)
        Per-observation Jacobians (constant in theta by linearity).
    W_obs : ndarray, shape (n, q, q), optional
        Per-observation weight contributions; their mean is the
        ``DATA_AVERAGE`` weight. Each slice must be symmetric.
    cluster_id : ndarray, shape (n,), optional
        Resampling-unit labels for the bootstrap. Panel builders label each
        moment block with its individual index.
    """

    h: np.ndarray
    G_obs: np.ndarray
    W_obs: Optional[np.ndarray] = None
    cluster_id: Optional[np.ndarray] = None

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        G = np.asarray(self.G_obs, dtype=float)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "G_obs", G)
        if h.ndim != 2:
            raise ValueError("h must be an (n, q) array")
        n, q = h.shape
        if G.shape != (n, q, G.shape[2] if G.ndim == 3 else -1) or G.ndim != 3:
            raise ValueError("G_obs must be an (n, q, k) array matching h")
        k = G.shape[2]
        if not (q >= k >= 1):
            raise ValueError(f"need q >= k >= 1, got q={q}, k={k}")
        if n <= q:
            raise ValueError(f"need n > q for nonsingular sample moments, got n={n}, q={q}")
        if self.W_obs is not None:
            W = np.asarray(self.W_obs, dtype=float)
            object.__setattr__(self, "W_obs", W)
            if W.shape != (n, q, q):
                raise ValueError("W_obs must be an (n, q, q) array")
            if not np.allclose(W, np.swapaxes(W, 1, 2), rtol=1e-10, atol=1e-12):
                raise ValueError("every W(X_i) must be symmetric")
        if self.cluster_id is not None:
            cid = np.asarray(self.cluster_id)
            object.__setattr__(self, "cluster_id", cid)
            if cid.shape != (n,):
                raise ValueError("cluster_id must have one label per observation")

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def q(self) -> int:
        return self.h.shape[1]

    @property
    def k(self) -> int:
        return self.G_obs.shape[2]

    def g_obs(self, theta: np.ndarray) -> np.ndarray:
        """Per-observation moments g_i(theta) = h_i + G_i theta, shape (n, q)."""
        theta = _check_theta(theta, self.k)
        return self.h + self.G_obs @ theta

    def weight_matrix(self, spec: WeightSpec) -> np.ndarray:
        """Materialize a weight specification as a q x q matrix."""
        if spec.kind is WeightKind.IDENTITY:
            return np.eye(self.q)
        if spec.kind is WeightKind.DATA_AVERAGE:
            if self.W_obs is None:
                raise ValueError("system has no per-observation weight contributions")
            return self.W_obs.mean(axis=0)
        stats = moment_stats(self, spec.theta)
        if spec.kind is WeightKind.EFFICIENT:
            return stats.Omega
        return stats.Omega_c

    def weight_obs(self, spec: WeightSpec):
        """Per-observation contributions Xi(X_i) of a weight specification.

        Returns ``None`` for the identity weight (the third term of the
        influence contributions drops), an (n, q) array of rank-one factors
        for the efficient kinds (Xi_i = f_i f_i'), or the (n, q, q) array of
        stored contributions for the data-average weight.
        """
        if spec.kind is WeightKind.IDENTITY:
            return None
        if spec.kind is WeightKind.DATA_AVERAGE:
            if self.W_obs is None:
                raise ValueError("system has no per-observation weight contributions")
            return self.W_obs
        g = self.g_obs(spec.theta)
        if spec.kind is WeightKind.EFFICIENT_CENTERED:
            g = g - g.mean(axis=0)
        return g


@dataclass(frozen=True)
class MomentStats:
    """Sample moment mean, Jacobian, and second-moment matrices at a point."""

    g_n: np.ndarray
    G_n: np.ndarray
    Omega: np.ndarray
    Omega_c: np.ndarray


@dataclass(frozen=True)
class PanelDataset:
    """A balanced panel with a scalar regressor.

    ``y`` is N x T; ``x`` is N x T and may be omitted for pure AR(1) panels
    where the regressor is the lagged outcome. Missing cells are rejected:
    unbalanced panels are out of scope.
    """

    y: np.ndarray
    x: Optional[np.ndarray] = None
    balanced: bool = field(default=True)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "y", y)
        if y.ndim != 2:
            raise ValueError("y must be an N x T array")
        if not self.balanced:
            raise ValueError("unbalanced panels are not supported")
        if not np.all(np.isfinite(y)):
            raise ValueError("panel has missing or non-finite cells; unbalanced panels are not supported")
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            object.__setattr__(self, "x", x)
            if x.shape != y.shape:
                raise ValueError("x must match the shape of y")
            if not np.all(np.isfinite(x)):
                raise ValueError("panel has missing or non-finite cells; unbalanced panels are not supported")

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]


def build_iv_system(y: np.ndarray, X: np.ndarray, Z: np.ndarray) -> LinearMomentSystem:
    """Build the moment system of a linear IV regression y_i = X_i' theta + e_i.

    The moments are g_i(theta) = Z_i (y_i - X_i' theta), so h_i = Z_i y_i and
    G_i = -Z_i X_i'. The stored weight contributions are Z_i Z_i', making the
    data-average weight equal to Z'Z / n (the 2SLS weight).

    Parameters
    ----------
    y : ndarray, shape (n,)
    X : ndarray, shape (n, k) or (n,)
    Z : ndarray, shape (n, q) or (n,)

    Raises
    ------
    ValueError
        On dimension mismatch or q < k.
    SingularWeightError
        If Z'Z is rank deficient (never silently pseudo-inverted).
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Z.ndim == 1:
        Z = Z[:, None]
    n = y.shape[0]
    if X.shape[0] != n or Z.shape[0] != n:
        raise ValueError("y, X, Z must have the same number of rows")
    k, q = X.shape[1], Z.shape[1]
    if q < k:
        raise ValueError(f"need at least as many instruments as regressors, got q={q} < k={k}")
    gram = Z.T @ Z
    w = np.linalg.eigvalsh(gram)
    if w.min() <= w.max() / COND_LIMIT:
        cond = np.inf if w.min() <= 0 else w.max() / w.min()
        raise SingularWeightError(
            f"instrument Gram matrix Z'Z is rank deficient (condition number {cond:.3e})"
        )
    h = Z * y[:, None]
    G_obs = -np.einsum("nq,nk->nqk", Z, X)
    W_obs = np.einsum("nq,np->nqp", Z, Z)
    return LinearMomentSystem(h=h, G_obs=G_obs, W_obs=W_obs)


def differencing_weight(m: int) -> np.ndarray:
    """The m x m band matrix with 2 on the diagonal and -1 on the first off-diagonals.

    This is the covariance (up to scale) of first-differenced white noise and
    the standard one-step weight core for difference GMM.
    """
    H = 2.0 * np.eye(m)
    idx = np.arange(m - 1)
    H[idx, idx + 1] = -1.0
    H[idx + 1, idx] = -1.0
    return H


def build_ab_system(panel: PanelDataset, mode: str = "predetermined") -> LinearMomentSystem:
    """Build the first-differenced GMM system of a balanced dynamic panel.

    In ``"predetermined"`` mode the model is y_it = x_it beta + eta_i + v_it
    with x predetermined; the differenced equation at t = 2..T is instrumented
    by z_it = (x_i1, ..., x_{i,t-1}), giving q = T(T-1)/2 moments. In
    ``"ar1"`` mode the regressor is the lagged outcome (x_it := y_{i,t-1});
    equations run over t = 3..T with instruments (y_i1, ..., y_{i,t-2}) and
    q = (T-1)(T-2)/2.

    Each individual contributes one moment block Z_i' dy_i, so the returned
    system has n = N rows; ``cluster_id`` is the individual index. The stored
    weight contributions are Z_i' H Z_i with H the usual 2/-1 band matrix.

    Raises
    ------
    ValueError
        If T < 3 or the panel is unbalanced.
    """
    if mode not in ("predetermined", "ar1"):
        raise ValueError(f"unknown mode {mode!r}")
    if panel.T < 3:
        raise ValueError("difference GMM needs T >= 3")
    if mode == "ar1":
        # Relabel so the lagged outcome is an ordinary predetermined regressor
        # observed over T-1 periods.
        return _build_diff_gmm(panel.y[:, 1:], panel.y[:, :-1])
    if panel.x is None:
        raise ValueError("predetermined mode requires a regressor column")
    return _build_diff_gmm(panel.y, panel.x)


def _build_diff_gmm(y: np.ndarray, x: np.ndarray) -> LinearMomentSystem:
    N, T = y.shape
    e = T - 1                      # differenced equations t = 2..T
    q = T * (T - 1) // 2
    dy = np.diff(y, axis=1)        # (N, T-1)
    dx = np.diff(x, axis=1)

    # Zmat[i] is the (T-1) x q instrument matrix diag(z_i2', ..., z_iT').
    Zmat = np.zeros((N, e, q))
    off = 0
    for t in range(2, T + 1):
        width = t - 1
        Zmat[:, t - 2, off:off + width] = x[:, :width]
        off += width

    h = np.einsum("net,ne->nt", Zmat, dy)
    G_obs = -np.einsum("net,ne->nt", Zmat, dx)[:, :, None]
    H = differencing_weight(e)
    W_obs = np.einsum("net,ef,nfs->nts", Zmat, H, Zmat)
    W_obs = 0.5 * (W_obs + np.swapaxes(W_obs, 1, 2))
    return LinearMomentSystem(h=h, G_obs=G_obs, W_obs=W_obs, cluster_id=np.arange(N))


def moment_stats(sys: LinearMomentSystem, theta: np.ndarray) -> MomentStats:
    """Sample mean, Jacobian, and (un)centered second moments of g_i(theta).

    Returns g_n(theta), G_n, Omega_n(theta) = mean of g_i g_i', and the
    centered variant Omega_n(theta) - g_n g_n', all in one pass.
    """
    g = sys.g_obs(theta)
    g_n = g.mean(axis=0)
    G_n = sys.G_obs.mean(axis=0)
    Omega = g.T @ g / sys.n
    Omega = 0.5 * (Omega + Omega.T)
    Omega_c = Omega - np.outer(g_n, g_n)
    return MomentStats(g_n=g_n, G_n=G_n, Omega=Omega, Omega_c=Omega_c)


def omega_derivative(sys: LinearMomentSystem, theta: np.ndarray, j: int,
                     centered: bool = False) -> np.ndarray:
    """Derivative of the weight matrix Omega_n(theta) in coordinate j.

    Returns Upsilon_j + Upsilon_j' where Upsilon_j(theta) is the sample mean
    of g_i(theta) times the j-th Jacobian column transposed; with
    ``centered=True`` both factors are demeaned, giving the derivative of the
    centered second-moment matrix. ``j`` is a 0-based coordinate index.
    """
    if not 0 <= j < sys.k:
        raise IndexError(f"coordinate index {j} out of range for k={sys.k}")
    g = sys.g_obs(theta)
    dg = sys.G_obs[:, :, j]
    if centered:
        g = g - g.mean(axis=0)
        dg = dg - dg.mean(axis=0)
    ups = g.T @ dg / sys.n
    return ups + ups.T


def _check_theta(theta, k: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape != (k,):
        raise ValueError(f"theta must have length {k}, got {theta.shape}")
    return theta
