"""Preconditioned conjugate gradient for SPD operators given as callables."""
from __future__ import annotations

import numpy as np


def pcg(matvec, b, precond=None, tol=1e-10, max_iters=500, x0=None):
    """Solve ``H x = b`` until ``|H x - b| <= tol`` (absolute).

    Returns ``(x, residual_norm, iterations)``.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x) if x0 is not None else b.copy()
    rn = np.linalg.norm(r)
    if rn <= tol:
        return x, rn, 0
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = r @ z
    it = 0
    for it in range(1, max_iters + 1):
        Hp = matvec(p)
        pHp = p @ Hp
        if pHp <= 0:
            # loss of positive definiteness from roundoff; stop with what we have
            break
        alpha = rz / pHp
        x += alpha * p
        r -= alpha * Hp
        rn = np.linalg.norm(r)
        if rn <= tol:
            break
        z = precond(r) if precond is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, rn, it
