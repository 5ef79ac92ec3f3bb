"""Proximal augmented Lagrangian method with semismooth Newton inner solves.

Each outer step minimizes the strongly convex function

    Phi(theta, xi) = 0.5 |theta - Y|^2
                     + (sigma/2) |w - P_D(w)|^2 + (sigma/2) |max(z, 0)|^2
                     - |u~|^2 / (2 sigma) - |v~|^2 / (2 sigma)
                     + h1/(2 sigma) |theta - theta~|^2 + h2/(2 sigma) |xi - xi~|^2,

    w = xi - v~/sigma,   z = -(A theta + B xi) + u~/sigma,

around the anchor (theta~, xi~, u~, v~), then updates the multipliers.  The
inner problem is solved by a globalized semismooth Newton method whose
Hessian element exploits the 0/1 pattern of the active pairs.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from ._common import finalize_model, open_sink
from ._linalg import pcg
from .constraints import ConstraintSet
from .operators import OperatorContext
from .problem import (DualState, PrimalState, ProblemData, SolverReport,
                      dual_objective, kkt_residuals)

__all__ = [
    "PalmConfig", "SsnConfig", "Anchor", "Subproblem", "HessianOperator",
    "palm_subproblem_gradient", "assemble_hessian_action", "ssn_solve",
    "multiplier_update", "palm_fit", "SsnStats",
]

TRACE_FIELDS = ["outer", "ssn_iters", "pcg_iters", "grad_norm", "R_P", "R_D", "R_C",
                "sigma", "elapsed"]


@dataclass(frozen=True)
class PalmConfig:
    h1: float = 1e-3
    h2: float = 1e-3
    # None picks min(1, 10/n): the penalty curvature grows with the number of
    # active pairs, and a large first sigma stalls the first Newton solve
    sigma0: float | None = None
    sigma_growth: float = 3.0
    sigma_max: float = 1e6
    eps0: float = 0.1
    eps_rate: float = 0.5
    delta0: float = 0.5
    delta_rate: float = 0.5
    use_criterion_b: bool = True
    tol: float = 1e-6
    max_outer: int = 200
    max_time_secs: float = 7200.0
    # relative floor on inner gradient targets, below which rounding dominates
    precision_floor: float = 1e-13

    def __post_init__(self):
        if not (self.h1 > 0 and self.h2 > 0 and (self.sigma0 is None or self.sigma0 > 0)):
            raise ValueError("h1, h2 and sigma0 must be positive")
        if not self.sigma_growth > 1 or self.sigma_max < (self.sigma0 or 1.0):
            raise ValueError("need sigma_growth > 1 and sigma_max >= sigma0")
        if not (0 <= self.eps_rate < 1 and 0 <= self.delta_rate < 1):
            raise ValueError("tolerance sequences must be summable (rate < 1)")
        if not (self.eps0 >= 0 and 0 <= self.delta0 < 1):
            raise ValueError("need eps0 >= 0 and 0 <= delta0 < 1")

    @property
    def lambda_min(self) -> float:
        return min(self.h1, self.h2, 1.0)

    def initial_sigma(self, n: int) -> float:
        return self.sigma0 if self.sigma0 is not None else min(1.0, 10.0 / n)

    def eps(self, k):
        return self.eps0 * self.eps_rate ** k

    def delta(self, k):
        return self.delta0 * self.delta_rate ** k


@dataclass(frozen=True)
class SsnConfig:
    gamma_bar: float = 0.1
    tau_exp: float = 0.5
    delta_ls: float = 0.5
    mu_ls: float = 0.1
    max_ssn_iters: int = 50
    max_backtracks: int = 50
    direct_max_size: int = 2000
    pcg_max_iters: int = 1000
    # extra relative cap on the PCG residual; any tighter solve still meets the
    # min(gamma_bar, |g|^(1+tau)) requirement
    pcg_rel_tol: float = 1e-2
    preconditioner: str = "block"  # "block", "diag" or "none"

    def __post_init__(self):
        if not (0 < self.gamma_bar < 1 and 0 < self.tau_exp <= 1
                and 0 < self.delta_ls < 1 and 0 < self.mu_ls < 0.5):
            raise ValueError("SSN constants out of range")
        if self.preconditioner not in ("block", "diag", "none"):
            raise ValueError("preconditioner must be 'block', 'diag' or 'none'")


@dataclass(frozen=True)
class Anchor:
    theta: np.ndarray
    xi: np.ndarray
    u: np.ndarray
    v: np.ndarray


class Subproblem:
    """The inner function Phi for a fixed anchor and sigma."""

    def __init__(self, p: ProblemData, c: ConstraintSet, anchor: Anchor, sigma: float,
                 h1: float = 1e-3, h2: float = 1e-3, ctx: OperatorContext | None = None):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.p, self.c, self.anchor = p, c, anchor
        self.sigma, self.h1, self.h2 = float(sigma), float(h1), float(h2)
        self.ctx = ctx or p.operators()
        self._const = -(np.sum(anchor.u ** 2) + np.sum(anchor.v ** 2)) / (2.0 * sigma)

    # pieces shared by value, gradient and Hessian
    def parts(self, theta, xi):
        ctx, s, a = self.ctx, self.sigma, self.anchor
        n, d = self.p.n, self.p.d
        z = a.u / s - ctx.apply_A(theta) - ctx.apply_B(xi)
        zp = np.maximum(z, 0.0)
        W = (xi - a.v / s).reshape(n, d)
        PW = self.c.project_rows(W)
        return z, zp, W, PW

    def value(self, theta, xi, parts=None):
        z, zp, W, PW = parts or self.parts(theta, xi)
        s, a = self.sigma, self.anchor
        return float(0.5 * np.sum((theta - self.p.Y) ** 2)
                     + 0.5 * s * np.sum((W - PW) ** 2) + 0.5 * s * np.sum(zp ** 2)
                     + self._const
                     + self.h1 / (2 * s) * np.sum((theta - a.theta) ** 2)
                     + self.h2 / (2 * s) * np.sum((xi - a.xi) ** 2))

    def gradient(self, theta, xi, parts=None):
        z, zp, W, PW = parts or self.parts(theta, xi)
        s, a, ctx = self.sigma, self.anchor, self.ctx
        g_theta = theta - self.p.Y - s * ctx.apply_A_adjoint(zp) + self.h1 / s * (theta - a.theta)
        g_xi = (-s * ctx.apply_B_adjoint(zp) + s * (W - PW).ravel()
                + self.h2 / s * (xi - a.xi))
        return np.concatenate([g_theta, g_xi])

    def multipliers(self, theta, xi, parts=None):
        z, zp, W, PW = parts or self.parts(theta, xi)
        return self.sigma * zp, -self.sigma * (W - PW).ravel()

    def hessian(self, theta, xi, parts=None) -> "HessianOperator":
        z, zp, W, PW = parts or self.parts(theta, xi)
        J = self.c.jacobian_rows(W)
        return HessianOperator(self.ctx, z > 0, J, self.sigma, self.h1, self.h2)


class HessianOperator:
    """Generalized Hessian element of Phi as a linear operator on R^{n + dn}."""

    def __init__(self, ctx: OperatorContext, mask, J, sigma, h1, h2):
        self.ctx, self.mask, self.J = ctx, np.asarray(mask, dtype=bool), J
        self.sigma, self.h1, self.h2 = sigma, h1, h2
        self.n, self.d = ctx.n, ctx.d
        self.size = self.n + self.n * self.d
        self._products = None

    @property
    def products(self):
        if self._products is None:
            self._products = self.ctx.structured_gram_products(self.mask)
        return self._products

    def matvec(self, x):
        n, d, s, ctx = self.n, self.d, self.sigma, self.ctx
        dt, dx = x[:n], x[n:]
        R = self.mask * (ctx.apply_A(dt) + ctx.apply_B(dx))
        Dx = dx.reshape(n, d)
        JDx = np.einsum("iab,ib->ia", self.J, Dx)
        out_t = s * ctx.apply_A_adjoint(R) + (1.0 + self.h1 / s) * dt
        out_x = s * ctx.apply_B_adjoint(R) + (s * (Dx - JDx) + self.h2 / s * Dx).ravel()
        return np.concatenate([out_t, out_x])

    def xi_blocks(self) -> np.ndarray:
        """Diagonal (d x d) blocks of the xi-xi part."""
        s, d = self.sigma, self.d
        eye = np.eye(d)[None]
        return s * self.products.BWB_blocks + s * (eye - self.J) + (self.h2 / s) * eye

    def theta_block(self) -> np.ndarray:
        s = self.sigma
        return s * self.products.AWA + (1.0 + self.h1 / s) * np.eye(self.n)

    def dense(self) -> np.ndarray:
        n, d = self.n, self.d
        H = np.zeros((self.size, self.size))
        H[:n, :n] = self.theta_block()
        C = self.sigma * self.products.AWB_dense()
        H[:n, n:] = C
        H[n:, :n] = C.T
        blocks = self.xi_blocks()
        for j in range(n):
            sl = slice(n + j * d, n + (j + 1) * d)
            H[sl, sl] = blocks[j]
        return 0.5 * (H + H.T)

    def preconditioner(self, kind="block"):
        n, d, s = self.n, self.d, self.sigma
        if kind == "none":
            return None
        W = self.mask.astype(float)
        th_diag = s * (W.sum(axis=1) + W.sum(axis=0) - 2 * np.diag(W)) + 1.0 + self.h1 / s
        blocks = self.xi_blocks()
        if kind == "diag":
            diag = np.concatenate([th_diag, np.einsum("iaa->ia", blocks).ravel()])
            inv = 1.0 / diag
            return lambda r: inv * r
        inv_blocks = np.linalg.inv(blocks)

        def apply(r):
            out_x = np.einsum("iab,ib->ia", inv_blocks, r[n:].reshape(n, d)).ravel()
            return np.concatenate([r[:n] / th_diag, out_x])
        return apply


def palm_subproblem_gradient(p, theta, xi, anchor: Anchor, sigma, c, h1=1e-3, h2=1e-3, ctx=None):
    """Gradient of the inner function at ``(theta, xi)`` as one vector."""
    return Subproblem(p, c, anchor, sigma, h1, h2, ctx).gradient(theta, xi)


def assemble_hessian_action(p, theta, xi, anchor: Anchor, sigma, c, h1=1e-3, h2=1e-3,
                            ctx=None) -> HessianOperator:
    return Subproblem(p, c, anchor, sigma, h1, h2, ctx).hessian(theta, xi)


def multiplier_update(p, theta, xi, u_prev, v_prev, sigma, c, ctx=None):
    """``u = sigma * max(u/sigma - A theta - B xi, 0)``, ``v = -sigma (w - P_D(w))``."""
    ctx = ctx or p.operators()
    n, d = p.n, p.d
    u = sigma * np.maximum(u_prev / sigma - ctx.apply_A(theta) - ctx.apply_B(xi), 0.0)
    W = (xi - v_prev / sigma).reshape(n, d)
    v = -sigma * (W - c.project_rows(W)).ravel()
    return u, v


@dataclass
class SsnStats:
    iterations: int = 0
    pcg_iterations: int = 0
    grad_norms: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    status: str = "running"


def _newton_direction(H: HessianOperator, g, gnorm, cfg: SsnConfig):
    if H.size <= cfg.direct_max_size:
        M = H.dense()
        try:
            fac = cho_factor(M, lower=True, check_finite=False)
            return cho_solve(fac, -g), 0
        except LinAlgError:
            return np.linalg.solve(M, -g), 0
    tol = min(cfg.gamma_bar, gnorm ** (1.0 + cfg.tau_exp), cfg.pcg_rel_tol * gnorm)
    x, _, its = pcg(H.matvec, -g, H.preconditioner(cfg.preconditioner), tol=tol,
                    max_iters=cfg.pcg_max_iters)
    return x, its


def ssn_solve(sub: Subproblem, theta0, xi0, cfg: SsnConfig | None = None, stop=None,
              gtol: float = 0.0):
    """Semismooth Newton on ``grad Phi = 0`` from ``(theta0, xi0)``.

    ``stop(theta, xi, parts, gnorm)`` decides acceptance of an iterate; when
    absent the target is ``|grad Phi| <= gtol``.  Returns ``(theta, xi, stats)``.
    """
    cfg = cfg or SsnConfig()
    n = sub.p.n
    theta, xi = np.array(theta0, dtype=float), np.array(xi0, dtype=float)
    stats = SsnStats()
    parts = sub.parts(theta, xi)
    phi = sub.value(theta, xi, parts)
    g = sub.gradient(theta, xi, parts)
    gnorm = float(np.linalg.norm(g))
    stats.grad_norms.append(gnorm)
    accept = stop if stop is not None else (lambda t, x, pr, gn: gn <= gtol)
    for j in range(cfg.max_ssn_iters + 1):
        if accept(theta, xi, parts, gnorm):
            stats.status = "ok"
            return theta, xi, stats
        if j == cfg.max_ssn_iters:
            break
        H = sub.hessian(theta, xi, parts)
        step, its = _newton_direction(H, g, gnorm, cfg)
        stats.pcg_iterations += its
        slope = float(g @ step)
        if slope >= 0:
            # inexact direction lost descent; fall back to steepest descent
            step, slope = -g, -gnorm ** 2
        alpha = 1.0
        slack = 1e-14 * (1.0 + abs(phi))
        for m in range(cfg.max_backtracks + 1):
            t_new = theta + alpha * step[:n]
            x_new = xi + alpha * step[n:]
            parts_new = sub.parts(t_new, x_new)
            phi_new = sub.value(t_new, x_new, parts_new)
            if phi_new <= phi + cfg.mu_ls * alpha * slope + slack:
                break
            alpha *= cfg.delta_ls
        else:
            stats.status = "line_search_failed"
            stats.iterations = j
            return theta, xi, stats
        theta, xi, parts, phi = t_new, x_new, parts_new, phi_new
        g = sub.gradient(theta, xi, parts)
        gnorm = float(np.linalg.norm(g))
        stats.grad_norms.append(gnorm)
        stats.steps.append(alpha)
        stats.iterations = j + 1
    stats.status = "max_iters"
    return theta, xi, stats


def palm_fit(p: ProblemData, c: ConstraintSet, cfg: PalmConfig | None = None,
             ssn_cfg: SsnConfig | None = None, init=None, *, trace=None,
             standardization=None, raw_constraint=None, constraint_desc=None,
             return_state=False):
    """Solve the problem with the proximal ALM.

    Returns ``(FittedModel, SolverReport)``; the report's ``history`` holds one
    record per outer iteration including the inner gradient-norm sequence.
    """
    cfg = cfg or PalmConfig()
    ssn_cfg = ssn_cfg or SsnConfig()
    if hasattr(c, "check_dim"):
        c.check_dim(p.d)
    ctx = p.operators()
    n, d = p.n, p.d
    if init is None:
        theta, xi = p.Y.copy(), np.zeros(n * d)
        u, v = np.zeros((n, n)), np.zeros(n * d)
    else:
        pr, du = init
        theta, xi, u, v = pr.theta.copy(), pr.xi.copy(), du.u.copy(), du.v.copy()
    sigma = cfg.initial_sigma(n)
    lam = cfg.lambda_min
    sink = open_sink(trace, TRACE_FIELDS)
    t0 = time.perf_counter()
    history = []
    total_inner = total_pcg = 0
    termination = "max_outer"
    res = kkt_residuals(p, _primal(theta, xi), DualState(u, v), c, ctx)
    best = (max(res), theta, xi, u, v, res)
    k = 0
    try:
        for k in range(cfg.max_outer):
            if max(res) <= cfg.tol:
                termination = "converged"
                break
            anchor = Anchor(theta, xi, u, v)
            sub = Subproblem(p, c, anchor, sigma, cfg.h1, cfg.h2, ctx)
            target_a = lam * cfg.eps(k) / sigma
            floor = cfg.precision_floor * max(1.0, sigma) * (1.0 + np.linalg.norm(p.Y)) * np.sqrt(n)
            delta_k = cfg.delta(k)
            found = {}

            def stop(t, x, parts, gnorm):
                un, vn = sub.multipliers(t, x, parts)
                r = kkt_residuals(p, _primal(t, x), DualState(un, vn), c, ctx)
                if max(r) <= cfg.tol:
                    found["res"] = r
                    return True
                if gnorm <= floor:
                    found["res"] = r
                    return True
                if gnorm > target_a:
                    return False
                if cfg.use_criterion_b:
                    dist = np.sqrt(cfg.h1 * np.sum((t - theta) ** 2) + cfg.h2 * np.sum((x - xi) ** 2)
                                   + np.sum((un - u) ** 2) + np.sum((vn - v) ** 2))
                    if gnorm > delta_k * lam / sigma * dist:
                        return False
                found["res"] = r
                return True

            t_new, x_new, stats = ssn_solve(sub, theta, xi, ssn_cfg, stop=stop)
            total_inner += stats.iterations
            total_pcg += stats.pcg_iterations
            parts = sub.parts(t_new, x_new)
            u, v = sub.multipliers(t_new, x_new, parts)
            theta, xi = t_new, x_new
            res = found.get("res") or kkt_residuals(p, _primal(theta, xi), DualState(u, v), c, ctx)
            if max(res) <= best[0]:
                best = (max(res), theta, xi, u, v, res)
            elapsed = time.perf_counter() - t0
            rec = {"outer": k + 1, "ssn_iters": stats.iterations, "pcg_iters": stats.pcg_iterations,
                   "grad_norm": stats.grad_norms[-1], "R_P": res[0], "R_D": res[1], "R_C": res[2],
                   "sigma": sigma, "elapsed": elapsed, "grad_norms": list(stats.grad_norms),
                   "ssn_status": stats.status, "target": target_a}
            history.append(rec)
            if sink:
                sink.write(rec)
            if max(res) <= cfg.tol:
                termination = "converged"
                k += 1
                break
            if stats.status != "ok":
                termination = "ssn_" + stats.status
                k += 1
                break
            if elapsed > cfg.max_time_secs:
                termination = "max_time"
                k += 1
                break
            sigma = min(cfg.sigma_max, cfg.sigma_growth * sigma)
        else:
            k = cfg.max_outer
    finally:
        if sink:
            sink.close()

    if termination != "converged":
        _, theta, xi, u, v, res = best
    obj = 0.5 * float(np.sum((theta - p.Y) ** 2))
    report = SolverReport(
        solver="palm", iterations=k, inner_iterations=total_inner,
        R_P=res[0], R_D=res[1], R_C=res[2], objective=obj,
        dual_objective=dual_objective(p, DualState(u, v), c, tol=1e-4, ctx=ctx),
        time_secs=time.perf_counter() - t0, termination=termination,
        pcg_iterations=total_pcg, history=history)
    model = finalize_model(theta, xi, p.X, c, standardization=standardization,
                           raw_constraint=raw_constraint, constraint_desc=constraint_desc,
                           meta={"solver": "palm", "iterations": k, "inner_iterations": total_inner,
                                 "termination": termination, "R_KKT": report.R_KKT})
    if return_state:
        return model, report, (_primal(theta, xi), DualState(u, v))
    return model, report


def _primal(theta, xi):
    # y and eta are implicit in this method; only theta and xi enter the residuals
    return PrimalState(theta, xi, xi, np.zeros((0, 0)))
