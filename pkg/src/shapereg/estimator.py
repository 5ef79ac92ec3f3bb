"""Evaluating a fitted max-affine model, its subgradients and its Moreau envelope."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .constraints import project_simplex
from .problem import FittedModel

__all__ = ["predict", "predict_batch", "subgradient", "moreau_smooth", "MoreauResult",
           "save_model", "load_model", "model_to_json", "model_from_json", "FORMAT_TAG"]

FORMAT_TAG = "shapereg-model/1"


def _query(m: FittedModel, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (m.d,):
        raise ValueError(f"query point must have length {m.d}, got shape {x.shape}")
    return x


def _piece_values(m: FittedModel, x):
    # theta_j + <xi_j, x - X_j>, evaluated the way the model is defined
    return m.theta_hat + np.einsum("jl,jl->j", m.slopes, x[None, :] - m.anchors.T)


def predict(m: FittedModel, x) -> float:
    """``max_j theta_j + <xi_j, x - X_j>`` at a single point (raw units)."""
    return float(_piece_values(m, _query(m, x)).max())


def predict_batch(m: FittedModel, Xq) -> np.ndarray:
    """Predictions at the columns of a d x m array."""
    Xq = np.asarray(Xq, dtype=float)
    if Xq.ndim == 1 and m.d == 1:
        Xq = Xq[None, :]
    if Xq.ndim != 2 or Xq.shape[0] != m.d:
        raise ValueError(f"queries must be a {m.d} x m array")
    out = np.empty(Xq.shape[1])
    # chunk to bound memory at n x chunk
    step = max(1, 2_000_000 // max(1, m.n * m.d))
    for s in range(0, Xq.shape[1], step):
        Q = Xq[:, s:s + step]
        vals = m.theta_hat[:, None] + np.einsum("jl,jlk->jk", m.slopes,
                                                Q[None, :, :] - m.anchors.T[:, :, None])
        out[s:s + step] = vals.max(axis=0)
    return out


def subgradient(m: FittedModel, x, rtol: float = 1e-10):
    """Slope of the smallest-index active piece and the full active index list."""
    x = _query(m, x)
    vals = _piece_values(m, x)
    top = vals.max()
    active = np.flatnonzero(vals >= top - rtol * max(1.0, abs(top)))
    return m.slopes[active[0]].copy(), active.tolist()


@dataclass(frozen=True)
class MoreauResult:
    value: float
    gradient: np.ndarray
    prox: np.ndarray
    gap: float

    def __iter__(self):
        # unpacks as (value, gradient)
        yield self.value
        yield self.gradient


def _dual_value(lam, c, S, tau):
    g = S.T @ lam
    return float(lam @ c - g @ g / (2.0 * tau))


def _face_step(ga, H, scale):
    """Ascent step on the face ``sum(step) = 0`` of the concave quadratic.

    Returns ``(step, cap)`` where ``cap`` is 1 for a Newton step and inf for a
    ray along a direction of (numerically) zero curvature.
    """
    k = ga.size
    Q, _ = np.linalg.qr(np.ones((k, 1)), mode="complete")
    Z = Q[:, 1:]
    w, V = np.linalg.eigh(Z.T @ H @ Z)
    B = Z @ V
    gv = B.T @ ga
    flat = w <= 1e-12 * scale
    if np.any(flat & (np.abs(gv) > 1e-15 * scale)):
        return B[:, flat] @ gv[flat], np.inf
    return B[:, ~flat] @ (gv[~flat] / w[~flat]), 1.0


def _polish(lam, c, S, tau, rounds=None):
    """Exact maximizer of the simplex dual by a primal active-set method.

    Starts from the support of ``lam``.  On each face it takes the Newton step
    of the concave quadratic, or moves along a flat ascent ray when the face
    is degenerate, and stops at the first multiplier that reaches zero.
    Returns None if the iteration cap is hit.
    """
    n = c.size
    scale = 1.0 + np.abs(c).max() + np.linalg.norm(S, 2) ** 2 / tau
    lam = np.asarray(lam, dtype=float).copy()
    lam[lam < 1e-12] = 0.0
    if lam.sum() <= 0:
        lam[:] = 0.0
        lam[int(np.argmax(c))] = 1.0
    lam /= lam.sum()
    act = list(np.flatnonzero(lam))
    for _ in range(rounds or 20 * (n + 5)):
        g = c - S @ (S.T @ lam) / tau
        # enter a new piece only once the current face is optimal
        if np.ptp(g[act]) <= 1e-13 * scale:
            j = int(np.argmax(g))
            if g[j] <= g[act].max() + 1e-14 * scale:
                return lam
            if j not in act:
                act.append(j)
        a = np.array(act)
        step, cap = _face_step(g[a], S[a] @ S[a].T / tau, scale)
        neg = step < 0
        alpha = cap
        if np.any(neg):
            ratios = -lam[a][neg] / step[neg]
            alpha = min(cap, float(ratios.min()))
        if not np.isfinite(alpha):
            return None
        lam[a] = np.maximum(lam[a] + alpha * step, 0.0)
        if alpha < cap:
            lam[a[neg][np.argmin(ratios)]] = 0.0
        lam /= lam.sum()
        act = [i for i in act if lam[i] > 0]
    return None


def _fista_simplex(lam, c, S, tau, tol, max_iters, primal):
    """Accelerated projected gradient on the simplex dual, stopped on the duality gap."""
    Lg = max(np.linalg.norm(S, 2) ** 2 / tau, 1e-300)
    z, lam_prev, t = lam.copy(), lam.copy(), 1.0
    for it in range(max_iters):
        grad = c - S @ (S.T @ z) / tau
        lam_new = project_simplex(z + grad / Lg)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = lam_new + ((t - 1.0) / t_new) * (lam_new - lam_prev)
        lam_prev, lam, t = lam_new, lam_new, t_new
        if it % 20 == 0:
            pv, _ = primal(lam)
            if pv - _dual_value(lam, c, S, tau) <= tol * (1.0 + abs(pv)):
                break
    return lam


def moreau_smooth(m: FittedModel, x, tau: float, tol: float = 1e-10, max_iters: int = 100000):
    """Moreau envelope ``min_y psi(y) + tau/2 |y - x|^2`` and its gradient.

    The prox point is obtained from the dual problem over the simplex,

        max_{lam in simplex} <lam, b + S x> - |S^T lam|^2 / (2 tau),

    with ``y = x - S^T lam / tau``, solved exactly by an active-set method
    (accelerated projected gradient is the fallback).  Returns
    :class:`MoreauResult`; the value never exceeds ``predict(m, x)``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    x = _query(m, x)
    # pieces sharing a slope differ only by a constant, so keep the highest
    S, inv = np.unique(m.slopes, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    c = np.full(S.shape[0], -np.inf)
    np.maximum.at(c, inv, _piece_values(m, x))
    psi_x = float(c.max())
    n = S.shape[0]

    def primal(lam):
        y = x - S.T @ lam / tau
        return float(np.max(c + S @ (y - x)) + 0.5 * tau * np.sum((y - x) ** 2)), y

    lam = np.zeros(n)
    lam[np.argmax(c)] = 1.0
    pol = _polish(lam, c, S, tau)
    if pol is not None:
        lam = pol
    else:
        lam = _fista_simplex(lam, c, S, tau, tol, max_iters, primal)
        pol = _polish(lam, c, S, tau)
        if pol is not None and _dual_value(pol, c, S, tau) >= _dual_value(lam, c, S, tau):
            lam = pol
    pv, y = primal(lam)
    dv = _dual_value(lam, c, S, tau)
    gap = max(pv - dv, 0.0)
    if gap > 1e-6 * (1.0 + abs(pv)):
        raise RuntimeError(f"Moreau inner solve did not converge (duality gap {gap:.3e})")
    g = tau * (x - y)
    return MoreauResult(min(pv, psi_x), g, y, gap)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def model_to_json(m: FittedModel) -> str:
    std = m.standardization
    doc = {
        "format": FORMAT_TAG,
        "d": m.d,
        "n": m.n,
        "theta_hat": m.theta_hat.tolist(),
        "xi_hat": m.slopes.tolist(),
        "anchors": m.anchors.tolist(),
        "constraint": m.constraint,
        "standardization": std.to_dict() if std is not None else None,
        "solver": m.meta,
    }
    # Python floats serialize with their shortest round-trip repr
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=True) + "\n"


def model_from_json(text: str) -> FittedModel:
    from .data import StandardizationRecord
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"model file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        got = doc.get("format") if isinstance(doc, dict) else None
        raise ValueError(f"unsupported model format {got!r}; expected {FORMAT_TAG!r}")
    try:
        d, n = int(doc["d"]), int(doc["n"])
        theta = np.array(doc["theta_hat"], dtype=float)
        xi = np.array(doc["xi_hat"], dtype=float).reshape(n, d)
        anchors = np.array(doc["anchors"], dtype=float).reshape(d, n)
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"malformed model file: {exc}") from None
    std = doc.get("standardization")
    return FittedModel(theta, xi.ravel(), anchors, constraint=doc.get("constraint"),
                       standardization=StandardizationRecord.from_dict(std) if std else None,
                       meta=doc.get("solver") or {})


def save_model(m: FittedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_to_json(m))


def load_model(path) -> FittedModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(fh.read())
