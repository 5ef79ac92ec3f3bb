"""Per-point Lipschitz bounds estimated from nearest-neighbour slopes."""
from __future__ import annotations

import warnings

import numpy as np

from .constraints import LipschitzBall, PerPoint, dual_norm_exponent, _check_q
from .problem import ProblemData

__all__ = ["estimate_lipschitz", "build_perpoint_problem", "FLOOR_REL"]

FLOOR_REL = 1e-8


def estimate_lipschitz(p: ProblemData, k: int = 5, norm_p=2) -> np.ndarray:
    """``L_i = median_j |Y_i - Y_j| / |X_i - X_j|_p`` over the k nearest neighbours.

    Neighbours are found in Euclidean distance and every point tied with the
    k-th distance is included.  Neighbours at distance zero are dropped with a
    warning.  The result may contain zeros (flat neighbourhoods).
    """
    norm_p = _check_q(norm_p)
    n = p.n
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n = {n}")
    Xt = p.X.T
    L = np.empty(n)
    dropped = 0
    for i in range(n):
        diff = Xt - Xt[i]
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        dist[i] = np.inf
        order = np.argsort(dist, kind="stable")
        kth = dist[order[k - 1]]
        nbrs = np.flatnonzero(dist <= kth)
        pn = np.linalg.norm(diff[nbrs], ord=norm_p, axis=1)
        good = pn > 0
        dropped += int(np.sum(~good))
        if not np.any(good):
            raise ValueError(f"all neighbours of point {i} coincide with it; cannot estimate L_{i}")
        L[i] = np.median(np.abs(p.Y[i] - p.Y[nbrs[good]]) / pn[good])
    if dropped:
        warnings.warn(f"{dropped} duplicate-predictor neighbour(s) excluded", RuntimeWarning,
                      stacklevel=2)
    if np.any(L == 0):
        warnings.warn(f"{int(np.sum(L == 0))} point(s) have zero estimated slope; "
                      "their gradients will be pinned near 0", RuntimeWarning, stacklevel=2)
    return L


def build_perpoint_problem(p: ProblemData, L, norm_p=2) -> PerPoint:
    """Balls ``{|xi_i|_q <= L_i}`` with q dual to ``norm_p``.

    Nonpositive radii are raised to ``1e-8 * max(L)`` (or ``1e-8`` when all are
    zero) so every set keeps a nonempty interior.
    """
    L = np.asarray(L, dtype=float)
    if L.shape != (p.n,):
        raise ValueError(f"need {p.n} radii, got shape {L.shape}")
    if np.any(~np.isfinite(L)) or np.any(L < 0):
        raise ValueError("radii must be finite and nonnegative")
    top = L.max()
    floor = FLOOR_REL * top if top > 0 else FLOOR_REL
    L = np.maximum(L, floor)
    q = dual_norm_exponent(_check_q(norm_p))
    return PerPoint(tuple(LipschitzBall(q, float(r)) for r in L))
