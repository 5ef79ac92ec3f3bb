"""Problem data, solver states, and objective / KKT evaluation.

The estimator solves

    min 0.5 |theta - Y|^2   s.t.  xi_i in D for all i,  A theta + B xi >= 0,

whose dual is

    max -0.5 |A^* u|^2 - <Y, A^* u> - sum_i sigma_D(-v_i)   s.t.  u >= 0,  B^* u + v = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constraints import ConstraintSet
from .operators import OperatorContext

__all__ = [
    "ProblemData", "PrimalState", "DualState", "FittedModel", "SolverReport",
    "primal_objective", "dual_objective", "kkt_residuals",
]

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class ProblemData:
    """Predictors ``X`` (d x n, one column per observation) and responses ``Y``."""
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or Y.ndim != 1:
            raise ValueError("X must be d x n and Y a vector")
        if X.shape[1] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[1]} columns but Y has {Y.shape[0]} entries")
        if Y.shape[0] < 2:
            raise ValueError("need at least two observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("X and Y must be finite")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def operators(self) -> OperatorContext:
        return OperatorContext(self.X)


@dataclass
class PrimalState:
    theta: np.ndarray
    xi: np.ndarray
    y: np.ndarray
    eta: np.ndarray

    def copy(self):
        return PrimalState(self.theta.copy(), self.xi.copy(), self.y.copy(), self.eta.copy())


@dataclass
class DualState:
    u: np.ndarray
    v: np.ndarray

    def copy(self):
        return DualState(self.u.copy(), self.v.copy())


@dataclass(frozen=True)
class FittedModel:
    """Max-affine model ``x -> max_j theta_j + <xi_j, x - X_j>``.

    ``anchors`` is d x n and ``xi_hat`` has length d*n (row-major blocks).
    Values are in raw data units; ``standardization`` is kept for reference.
    """
    theta_hat: np.ndarray
    xi_hat: np.ndarray
    anchors: np.ndarray
    constraint: Optional[dict] = None
    standardization: Optional[object] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        th = np.asarray(self.theta_hat, dtype=float)
        an = np.asarray(self.anchors, dtype=float)
        if an.ndim == 1:
            an = an[None, :]
        xi = np.asarray(self.xi_hat, dtype=float).ravel()
        d, n = an.shape
        if th.shape != (n,) or xi.shape != (d * n,):
            raise ValueError("inconsistent model dimensions")
        object.__setattr__(self, "theta_hat", th)
        object.__setattr__(self, "xi_hat", xi)
        object.__setattr__(self, "anchors", an)

    @property
    def d(self):
        return self.anchors.shape[0]

    @property
    def n(self):
        return self.anchors.shape[1]

    @property
    def slopes(self) -> np.ndarray:
        """Piece gradients as an (n, d) array."""
        return self.xi_hat.reshape(self.n, self.d)

    @property
    def intercepts(self) -> np.ndarray:
        """``b_j`` with piece j equal to ``b_j + <xi_j, x>``."""
        return self.theta_hat - np.einsum("ij,ji->i", self.slopes, self.anchors)

    def interpolation_error(self) -> float:
        vals = (self.intercepts[None, :] + self.anchors.T @ self.slopes.T).max(axis=1)
        return float(np.max(np.abs(vals - self.theta_hat)))


@dataclass
class SolverReport:
    solver: str
    iterations: int
    inner_iterations: int
    R_P: float
    R_D: float
    R_C: float
    objective: float
    dual_objective: float
    time_secs: float
    termination: str
    pcg_iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def R_KKT(self) -> float:
        return max(self.R_P, self.R_D, self.R_C)

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    def summary(self) -> str:
        if self.solver == "palm":
            its = f"{self.iterations}({self.inner_iterations})"
        else:
            its = str(self.iterations)
        return (f"{self.solver}: iters={its} time={self.time_secs:.2f}s "
                f"R_KKT={self.R_KKT:.2e} obj={self.objective:.8g} [{self.termination}]")


def _check_dims(p: ProblemData, theta=None, xi=None, u=None, v=None):
    n, d = p.n, p.d
    if theta is not None and np.shape(theta) != (n,):
        raise ValueError(f"theta must have length {n}")
    if xi is not None and np.shape(xi) != (n * d,):
        raise ValueError(f"xi must have length {n * d}")
    if u is not None and np.shape(u) != (n, n):
        raise ValueError(f"u must be {n}x{n}")
    if v is not None and np.shape(v) != (n * d,):
        raise ValueError(f"v must have length {n * d}")


def primal_objective(p: ProblemData, s: PrimalState, c: ConstraintSet,
                     tol: float = FEAS_TOL, ctx: OperatorContext | None = None):
    """Return ``(0.5 |theta - Y|^2, feasible)``.

    Feasibility is checked relative to the size of the quantities involved.
    """
    _check_dims(p, s.theta, s.xi)
    ctx = ctx or p.operators()
    Xi = s.xi.reshape(p.n, p.d)
    dist = np.linalg.norm(Xi - c.project_rows(Xi))
    Atheta = ctx.apply_A(s.theta)
    Bxi = ctx.apply_B(s.xi)
    viol = np.linalg.norm(np.minimum(Atheta + Bxi, 0.0))
    feasible = (dist <= tol * (1.0 + np.linalg.norm(s.xi))
                and viol <= tol * (1.0 + np.linalg.norm(Atheta) + np.linalg.norm(Bxi)))
    return 0.5 * float(np.sum((s.theta - p.Y) ** 2)), bool(feasible)


def dual_objective(p: ProblemData, dual: DualState, c: ConstraintSet,
                   tol: float = FEAS_TOL, ctx: OperatorContext | None = None) -> float:
    """Dual value; ``-inf`` if ``u`` has negative entries or the conjugate is infinite."""
    _check_dims(p, u=dual.u, v=dual.v)
    ctx = ctx or p.operators()
    u = np.asarray(dual.u, dtype=float)
    if np.any(u < -tol * (1.0 + np.abs(u).max())):
        return -np.inf
    Au = ctx.apply_A_adjoint(u)
    V = -np.asarray(dual.v, dtype=float).reshape(p.n, p.d)
    conj = float(np.sum(c.support_rows(V, tol)))
    return float(-0.5 * Au @ Au - p.Y @ Au - conj)


def kkt_residuals(p: ProblemData, primal: PrimalState, dual: DualState, c: ConstraintSet,
                  ctx: OperatorContext | None = None):
    """Normalized primal, dual and complementarity residuals ``(R_P, R_D, R_C)``."""
    theta, xi, u, v = primal.theta, primal.xi, dual.u, dual.v
    _check_dims(p, theta, xi, u, v)
    ctx = ctx or p.operators()
    nrm = np.linalg.norm
    n, d = p.n, p.d
    Xi = xi.reshape(n, d)
    Atheta = ctx.apply_A(theta)
    Bxi = ctx.apply_B(xi)
    K = Atheta + Bxi
    nA, nB, nu, nv, nxi = nrm(Atheta), nrm(Bxi), nrm(u), nrm(v), nrm(xi)

    rp = max(nrm(Xi - c.project_rows(Xi)) / (1.0 + nxi),
             nrm(np.minimum(K, 0.0)) / (1.0 + nA + nB))
    rd = max(nrm(theta - p.Y - ctx.apply_A_adjoint(u)) / (1.0 + nrm(p.Y) + nrm(theta) + nu),
             nrm(ctx.apply_B_adjoint(u) + v) / (1.0 + nu + nv))
    W = Xi - v.reshape(n, d)
    rc = max(nrm(Xi - c.project_rows(W)) / (1.0 + nxi + nv),
             nrm(K - np.maximum(K - u, 0.0)) / (1.0 + nA + nB + nu))
    return float(rp), float(rd), float(rc)
