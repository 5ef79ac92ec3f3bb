"""Symmetric Gauss-Seidel ADMM for the shape-constrained least-squares QP.

Splitting with ``eta = -(A theta + B xi) <= 0`` and ``y = xi in D``.  Each
sweep updates (y, eta) jointly, then theta, xi, theta again, then the
multipliers.  Every subproblem has a closed form: the theta system is a rank
one update of the identity and the xi system is block diagonal with d x d
blocks that never change.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from ._common import finalize_model, open_sink
from .constraints import ConstraintSet
from .operators import OperatorContext
from .problem import (DualState, PrimalState, ProblemData, SolverReport,
                      dual_objective, kkt_residuals)

__all__ = ["AdmmConfig", "AdmmState", "admm_step", "admm_fit", "admm_initial_state"]

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0
TRACE_FIELDS = ["iter", "R_P", "R_D", "R_C", "objective", "sigma", "elapsed"]


@dataclass(frozen=True)
class AdmmConfig:
    sigma: float = 1.0
    tau: float = 1.618
    tol: float = 1e-6
    max_iters: int = 10000
    max_time_secs: float = 7200.0
    sigma_adapt: bool = True
    adapt_every: int = 50
    adapt_ratio: float = 5.0
    adapt_factor: float = 2.0
    check_every: int = 1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.tau < GOLDEN:
            raise ValueError("tau must lie in (0, (1 + sqrt 5) / 2)")
        if self.max_iters < 1 or self.adapt_every < 1 or self.check_every < 1:
            raise ValueError("iteration counts must be positive")
        if not (self.adapt_ratio > 1 and self.adapt_factor > 1):
            raise ValueError("adaptation ratio and factor must exceed 1")


@dataclass
class AdmmState:
    primal: PrimalState
    dual: DualState
    sigma: float


def admm_initial_state(p: ProblemData, ctx: OperatorContext, sigma: float) -> AdmmState:
    n, d = p.n, p.d
    theta = p.Y.copy()
    primal = PrimalState(theta, np.zeros(n * d), np.zeros(n * d),
                         np.minimum(-ctx.apply_A(theta), 0.0))
    return AdmmState(primal, DualState(np.zeros((n, n)), np.zeros(n * d)), float(sigma))


def admm_step(state: AdmmState, p: ProblemData, c: ConstraintSet, ctx: OperatorContext,
              tau: float = 1.618) -> AdmmState:
    """One sweep; returns a new state and leaves the input untouched."""
    n, d = p.n, p.d
    s = state.sigma
    theta, xi = state.primal.theta, state.primal.xi
    u, v = state.dual.u, state.dual.v

    # step 1: y and eta only see the previous theta, xi
    y = c.project_rows((xi - v / s).reshape(n, d)).ravel()
    Bxi = ctx.apply_B(xi)
    eta = np.minimum(-ctx.apply_A(theta) - Bxi + u / s, 0.0)

    # step 2a, 2b, 2c
    theta_hat = ctx.solve_theta_system(p.Y - s * ctx.apply_A_adjoint(eta + Bxi - u / s), s)
    rhs = y + v / s - ctx.apply_B_adjoint(eta + ctx.apply_A(theta_hat) - u / s)
    xi_new = ctx.solve_xi_system(rhs)
    Bxi_new = ctx.apply_B(xi_new)
    theta_new = ctx.solve_theta_system(p.Y - s * ctx.apply_A_adjoint(eta + Bxi_new - u / s), s)

    # step 3
    u_new = u - tau * s * (eta + ctx.apply_A(theta_new) + Bxi_new)
    v_new = v - tau * s * (xi_new - y)
    return AdmmState(PrimalState(theta_new, xi_new, y, eta), DualState(u_new, v_new), s)


def admm_fit(p: ProblemData, c: ConstraintSet, cfg: AdmmConfig | None = None, init=None,
             *, trace=None, standardization=None, raw_constraint=None,
             constraint_desc=None, return_state=False):
    """Solve the problem with sGS-ADMM.

    ``init`` may be a ``(PrimalState, DualState)`` pair.  Returns
    ``(FittedModel, SolverReport)`` (plus the final state when
    ``return_state`` is set).
    """
    cfg = cfg or AdmmConfig()
    if hasattr(c, "check_dim"):
        c.check_dim(p.d)
    ctx = p.operators()
    if init is None:
        state = admm_initial_state(p, ctx, cfg.sigma)
    else:
        pr, du = init
        state = AdmmState(pr.copy(), du.copy(), cfg.sigma)
    sink = open_sink(trace, TRACE_FIELDS)
    t0 = time.perf_counter()
    best = None
    termination = "max_iters"
    it = 0
    history = []
    try:
        for it in range(1, cfg.max_iters + 1):
            state = admm_step(state, p, c, ctx, cfg.tau)
            pr = state.primal
            if not (np.all(np.isfinite(pr.theta)) and np.all(np.isfinite(pr.xi))
                    and np.all(np.isfinite(state.dual.u))):
                raise FloatingPointError(
                    f"non-finite iterate at ADMM iteration {it} (sigma={state.sigma:g}); "
                    "try a smaller sigma or standardized data")
            elapsed = time.perf_counter() - t0
            last = it == cfg.max_iters or elapsed > cfg.max_time_secs
            if it % cfg.check_every and not last:
                continue
            rp, rd, rc = kkt_residuals(p, pr, state.dual, c, ctx)
            rk = max(rp, rd, rc)
            if best is None or rk <= best[0]:
                best = (rk, it, state, (rp, rd, rc))
            rec = {"iter": it, "R_P": rp, "R_D": rd, "R_C": rc,
                   "objective": 0.5 * float(np.sum((pr.theta - p.Y) ** 2)),
                   "sigma": state.sigma, "elapsed": elapsed}
            history.append(rec)
            if sink:
                sink.write(rec)
            if rk <= cfg.tol:
                termination = "converged"
                break
            if elapsed > cfg.max_time_secs:
                termination = "max_time"
                break
            if cfg.sigma_adapt and it % cfg.adapt_every == 0 and rd > 0:
                ratio = rp / rd
                if ratio > cfg.adapt_ratio:
                    state = replace(state, sigma=state.sigma * cfg.adapt_factor)
                elif ratio < 1.0 / cfg.adapt_ratio:
                    state = replace(state, sigma=state.sigma / cfg.adapt_factor)
    finally:
        if sink:
            sink.close()

    if termination == "converged":
        final, res = state, (rp, rd, rc)
    else:
        final, res = best[2], best[3]
    pr, du = final.primal, final.dual
    obj = 0.5 * float(np.sum((pr.theta - p.Y) ** 2))
    report = SolverReport(
        solver="admm", iterations=it, inner_iterations=0,
        R_P=res[0], R_D=res[1], R_C=res[2], objective=obj,
        dual_objective=dual_objective(p, du, c, tol=1e-4, ctx=ctx),
        time_secs=time.perf_counter() - t0, termination=termination, history=history)
    model = finalize_model(pr.theta, pr.xi, p.X, c, standardization=standardization,
                           raw_constraint=raw_constraint, constraint_desc=constraint_desc,
                           meta={"solver": "admm", "iterations": it,
                                 "termination": termination, "R_KKT": report.R_KKT})
    if return_state:
        return model, report, final
    return model, report
