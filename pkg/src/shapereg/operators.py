"""Implicit linear operators for the pairwise convexity constraints.

With ``theta`` in R^n and ``xi`` in R^{dn} (block i of length d is the slope of
piece i), the constraint matrix is

    (A theta + B xi)_{ij} = theta_i - theta_j + <X_j - X_i, xi_j>,

which must be nonnegative for a convex interpolant.  None of the operators are
stored as dense matrices; everything is an O(n^2 d) array computation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = ["OperatorContext", "GramProducts"]


def _check_square(Z, n):
    Z = np.asarray(Z, dtype=float)
    if Z.shape != (n, n):
        raise ValueError(f"expected an {n}x{n} matrix, got shape {Z.shape}")
    return Z


class OperatorContext:
    """Operators A, B and the cached block systems for fixed predictors.

    Parameters
    ----------
    X : array of shape (d, n)
        Predictors, one column per observation.
    """

    def __init__(self, X):
        X = np.array(X, dtype=float, ndmin=2)
        if X.ndim != 2:
            raise ValueError("X must be a d x n matrix")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        self.X = X
        self.d, self.n = X.shape
        self.Xt = np.ascontiguousarray(X.T)  # n x d, row i is X_i
        self.X.setflags(write=False)
        self.Xt.setflags(write=False)
        self._gram = None
        self._inv = None

    # -- A ------------------------------------------------------------------

    def apply_A(self, theta) -> np.ndarray:
        theta = self._vec(theta, self.n)
        return theta[:, None] - theta[None, :]

    def apply_A_adjoint(self, Z) -> np.ndarray:
        Z = _check_square(Z, self.n)
        return Z.sum(axis=1) - Z.sum(axis=0)

    # -- B ------------------------------------------------------------------

    def apply_B(self, xi) -> np.ndarray:
        Xi = self._blocks(xi)
        c = np.einsum("ij,ij->i", self.Xt, Xi)
        return c[None, :] - self.Xt @ Xi.T

    def apply_B_adjoint(self, Z) -> np.ndarray:
        Z = _check_square(Z, self.n)
        out = self.Xt * Z.sum(axis=0)[:, None] - Z.T @ self.Xt
        return out.ravel()

    # -- block systems ------------------------------------------------------

    @property
    def gram_blocks(self) -> np.ndarray:
        """Stacked ``G_i = B_i^T B_i`` of shape (n, d, d)."""
        if self._gram is None:
            Xt, n = self.Xt, self.n
            s = Xt.sum(axis=0)
            S = Xt.T @ Xt
            G = (n * Xt[:, :, None] * Xt[:, None, :]
                 - Xt[:, :, None] * s[None, None, :]
                 - s[None, :, None] * Xt[:, None, :]
                 + S[None])
            G = 0.5 * (G + np.swapaxes(G, 1, 2))
            G.setflags(write=False)
            self._gram = G
        return self._gram

    def _xi_inverses(self):
        if self._inv is None:
            d = self.d
            M = self.gram_blocks + np.eye(d)[None]
            inv = np.empty_like(M)
            eye = np.eye(d)
            for i in range(self.n):
                try:
                    fac = cho_factor(M[i], lower=True, check_finite=True)
                except np.linalg.LinAlgError as exc:
                    raise np.linalg.LinAlgError(
                        f"Cholesky of block {i} failed; X may contain extreme values") from exc
                inv[i] = cho_solve(fac, eye)
            inv = 0.5 * (inv + np.swapaxes(inv, 1, 2))
            inv.setflags(write=False)
            self._inv = inv
        return self._inv

    def solve_xi_system(self, rhs) -> np.ndarray:
        """Solve ``(I + B^* B) xi = rhs`` block by block."""
        R = self._blocks(rhs)
        out = np.einsum("iab,ib->ia", self._xi_inverses(), R)
        # one step of refinement keeps the residual at rounding level
        res = R - out - np.einsum("iab,ib->ia", self.gram_blocks, out)
        out += np.einsum("iab,ib->ia", self._xi_inverses(), res)
        return out.ravel()

    def apply_xi_system(self, xi) -> np.ndarray:
        X = self._blocks(xi)
        return (X + np.einsum("iab,ib->ia", self.gram_blocks, X)).ravel()

    def solve_theta_system(self, rhs, sigma: float) -> np.ndarray:
        """Solve ``(I + sigma A^* A) theta = rhs`` in O(n)."""
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        rhs = self._vec(rhs, self.n)
        n = self.n
        return (rhs + 2.0 * sigma * rhs.sum()) / (1.0 + 2.0 * sigma * n)

    # -- structured products --------------------------------------------------

    def structured_gram_products(self, Wbar) -> "GramProducts":
        Wbar = np.asarray(Wbar)
        if Wbar.shape != (self.n, self.n):
            raise ValueError(f"mask must be {self.n}x{self.n}")
        if Wbar.dtype != bool:
            if not np.all((Wbar == 0) | (Wbar == 1)):
                raise ValueError("mask must be binary (0/1)")
            Wbar = Wbar.astype(bool)
        return GramProducts(self, Wbar)

    # -- helpers --------------------------------------------------------------

    def _vec(self, v, m):
        v = np.asarray(v, dtype=float)
        if v.shape != (m,):
            raise ValueError(f"expected a vector of length {m}, got shape {v.shape}")
        return v

    def _blocks(self, xi):
        xi = np.asarray(xi, dtype=float)
        if xi.shape == (self.n, self.d):
            return xi
        if xi.shape != (self.n * self.d,):
            raise ValueError(f"expected a vector of length {self.n * self.d}, got shape {xi.shape}")
        return xi.reshape(self.n, self.d)


@dataclass(frozen=True)
class GramProducts:
    """Products ``A^* W A``, ``A^* W B``, ``B^* W B`` for a 0/1 mask ``W``.

    ``A^* W B`` is available as matvecs; ``B^* W B`` is block diagonal and is
    built from the nonzero rows of each column of the mask.
    """
    ctx: OperatorContext
    mask: np.ndarray

    @property
    def AWA(self) -> np.ndarray:
        W = self.mask.astype(float)
        return np.diag(W.sum(axis=1) + W.sum(axis=0)) - W - W.T

    def AWB_matvec(self, xi) -> np.ndarray:
        ctx = self.ctx
        return ctx.apply_A_adjoint(self.mask * ctx.apply_B(xi))

    def BWA_matvec(self, theta) -> np.ndarray:
        ctx = self.ctx
        return ctx.apply_B_adjoint(self.mask * ctx.apply_A(theta))

    def AWB_dense(self) -> np.ndarray:
        """Explicit ``n x dn`` matrix; block column j is ``Diag(W_j) B_j - e_j W_j^T B_j``."""
        ctx = self.ctx
        n, d, Xt = ctx.n, ctx.d, ctx.Xt
        T = self.mask[:, :, None] * (Xt[None, :, :] - Xt[:, None, :])  # T[i, j] = W_ij (X_j - X_i)
        colsum = T.sum(axis=0)
        T[np.arange(n), np.arange(n)] -= colsum
        return T.reshape(n, n * d)

    @property
    def BWB_blocks(self) -> np.ndarray:
        ctx = self.ctx
        Xt = ctx.Xt
        out = np.zeros((ctx.n, ctx.d, ctx.d))
        for j in range(ctx.n):
            idx = np.flatnonzero(self.mask[:, j])
            if idx.size:
                D = Xt[j] - Xt[idx]
                out[j] = D.T @ D
        return out

    def BWB_matvec(self, xi) -> np.ndarray:
        ctx = self.ctx
        return ctx.apply_B_adjoint(self.mask * ctx.apply_B(xi))
