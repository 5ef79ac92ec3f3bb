"""Gradient constraint sets for shape-constrained convex regression.

Each set ``D`` restricts the subgradients of the fitted function.  A set knows
how to project onto itself, how to pick an element of the generalized Jacobian
of that projection, and how to evaluate its support function (the conjugate of
its indicator).  All of these also exist in a blockwise form acting on an
``(n, d)`` array whose row ``i`` is the gradient ``xi_i`` of piece ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "ConstraintSet", "Free", "Monotone", "Box", "LipschitzBall", "PerPoint",
    "DataLipschitz", "JacobianElement", "Identity", "Diagonal",
    "ScaledProjector", "SignedSimplexJacobian",
    "project", "project_simplex", "jacobian_element", "conjugate_support",
    "blockwise_prox_p", "blockwise_jacobian", "parse_constraint",
    "dual_norm_exponent",
]


def dual_norm_exponent(q: float) -> float:
    """Return p with 1/p + 1/q = 1 for q in {1, 2, inf}."""
    if q == 1:
        return np.inf
    if q == 2:
        return 2.0
    if np.isinf(q):
        return 1.0
    raise ValueError(f"norm exponent must be 1, 2 or inf, got {q!r}")


def _check_q(q) -> float:
    q = float(q)
    if q not in (1.0, 2.0) and not np.isinf(q):
        raise ValueError(f"norm exponent must be 1, 2 or inf, got {q!r}")
    return q


# ---------------------------------------------------------------------------
# Simplex projection
# ---------------------------------------------------------------------------

def _simplex_rows(V: np.ndarray, radius=1.0) -> np.ndarray:
    """Project every row of ``V`` onto ``{z >= 0, sum(z) = radius}``.

    Sort-based threshold search, O(d log d) per row.
    """
    V = np.atleast_2d(V)
    m, d = V.shape
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (m,))
    S = -np.sort(-V, axis=1)
    css = np.cumsum(S, axis=1) - radius[:, None]
    ks = np.arange(1, d + 1)
    cond = S - css / ks > 0
    # cond is true on a prefix; rho is the last index of that prefix
    rho = d - 1 - np.argmax(cond[:, ::-1], axis=1)
    t = css[np.arange(m), rho] / (rho + 1)
    return np.maximum(V - t[:, None], 0.0)


def project_simplex(x) -> np.ndarray:
    """Euclidean projection of ``x`` onto the unit simplex."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("project_simplex expects a vector")
    return _simplex_rows(x[None, :])[0]


def _l1_ball_rows(V: np.ndarray, radius) -> np.ndarray:
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (V.shape[0],))
    out = V.copy()
    absV = np.abs(V)
    outside = absV.sum(axis=1) > radius
    if np.any(outside):
        r = radius[outside]
        proj = _simplex_rows(absV[outside] / r[:, None]) * r[:, None]
        out[outside] = np.sign(V[outside]) * proj
    return out


def _l1_ball_jacobian_rows(V: np.ndarray, radius) -> np.ndarray:
    m, d = V.shape
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (m,))
    J = np.broadcast_to(np.eye(d), (m, d, d)).copy()
    absV = np.abs(V)
    outside = absV.sum(axis=1) > radius
    if np.any(outside):
        r = radius[outside]
        simp = _simplex_rows(absV[outside] / r[:, None])
        act = (simp != 0).astype(float)
        nnz = act.sum(axis=1)
        Ht = act[:, :, None] * np.eye(d)[None] - act[:, :, None] * act[:, None, :] / nnz[:, None, None]
        s = np.sign(V[outside])
        J[outside] = s[:, :, None] * Ht * s[:, None, :]
    return J


# ---------------------------------------------------------------------------
# Jacobian elements
# ---------------------------------------------------------------------------

class JacobianElement:
    """A d x d element of the generalized Jacobian of a projection."""

    def matrix(self) -> np.ndarray:
        raise NotImplementedError

    def matvec(self, h) -> np.ndarray:
        return self.matrix() @ np.asarray(h, dtype=float)


@dataclass(frozen=True)
class Identity(JacobianElement):
    d: int

    def matrix(self):
        return np.eye(self.d)

    def matvec(self, h):
        return np.array(h, dtype=float)


@dataclass(frozen=True)
class Diagonal(JacobianElement):
    diag: np.ndarray

    def matrix(self):
        return np.diag(self.diag)

    def matvec(self, h):
        return self.diag * np.asarray(h, dtype=float)


@dataclass(frozen=True)
class ScaledProjector(JacobianElement):
    """``scale * (I - x x^T / |x|^2)`` from the l2 ball."""
    scale: float
    x: np.ndarray

    def matrix(self):
        u = self.x / np.linalg.norm(self.x)
        return self.scale * (np.eye(len(u)) - np.outer(u, u))

    def matvec(self, h):
        h = np.asarray(h, dtype=float)
        u = self.x / np.linalg.norm(self.x)
        return self.scale * (h - u * (u @ h))


@dataclass(frozen=True)
class SignedSimplexJacobian(JacobianElement):
    """``P (Diag(r) - r r^T / nnz(r)) P`` with ``P = Diag(signs)`` from the l1 ball."""
    signs: np.ndarray
    support: np.ndarray

    def matrix(self):
        r = self.support.astype(float)
        H = np.diag(r) - np.outer(r, r) / r.sum()
        return self.signs[:, None] * H * self.signs[None, :]

    def matvec(self, h):
        r = self.support.astype(float)
        g = self.signs * np.asarray(h, dtype=float)
        g = r * g - r * (r @ g) / r.sum()
        return self.signs * g


# ---------------------------------------------------------------------------
# Constraint sets
# ---------------------------------------------------------------------------

class ConstraintSet:
    """Base class.  Subclasses implement the blockwise row operations."""

    #: True for sets whose projection is piecewise affine
    polyhedral = True

    def project_rows(self, V: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian_rows(self, V: np.ndarray) -> np.ndarray:
        """Stacked ``(m, d, d)`` Jacobian elements for the rows of ``V``."""
        raise NotImplementedError

    def jacobian(self, x) -> JacobianElement:
        raise NotImplementedError

    def support_rows(self, V: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        raise NotImplementedError

    def contains_rows(self, V: np.ndarray, tol: float = 0.0) -> np.ndarray:
        P = self.project_rows(V)
        return np.linalg.norm(V - P, axis=1) <= tol * (1.0 + np.linalg.norm(V, axis=1))

    def check_dim(self, d: int) -> None:
        pass

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Free(ConstraintSet):
    """No shape constraint beyond convexity."""

    def project_rows(self, V):
        return np.array(V, dtype=float)

    def jacobian_rows(self, V):
        m, d = V.shape
        return np.broadcast_to(np.eye(d), (m, d, d)).copy()

    def jacobian(self, x):
        return Identity(len(x))

    def support_rows(self, V, tol=1e-9):
        scale = tol * (1.0 + np.abs(V).max(axis=1))
        return np.where(np.abs(V).max(axis=1) <= scale, 0.0, np.inf)

    def describe(self):
        return {"kind": "free"}


@dataclass(frozen=True)
class Monotone(ConstraintSet):
    """Nondecreasing in coordinates ``increasing``, nonincreasing in ``decreasing``.

    Indices are zero-based.
    """
    increasing: tuple = ()
    decreasing: tuple = ()

    def __post_init__(self):
        inc = tuple(int(i) for i in self.increasing)
        dec = tuple(int(i) for i in self.decreasing)
        if set(inc) & set(dec):
            raise ValueError("increasing and decreasing index sets must be disjoint")
        if any(i < 0 for i in inc + dec):
            raise ValueError("monotone indices must be nonnegative")
        object.__setattr__(self, "increasing", inc)
        object.__setattr__(self, "decreasing", dec)

    def check_dim(self, d):
        if any(i >= d for i in self.increasing + self.decreasing):
            raise ValueError(f"monotone index out of range for d={d}")

    def _masks(self, d):
        inc = np.zeros(d, dtype=bool)
        dec = np.zeros(d, dtype=bool)
        inc[list(self.increasing)] = True
        dec[list(self.decreasing)] = True
        return inc, dec

    def project_rows(self, V):
        V = np.array(V, dtype=float)
        inc, dec = self._masks(V.shape[1])
        V[:, inc] = np.maximum(V[:, inc], 0.0)
        V[:, dec] = np.minimum(V[:, dec], 0.0)
        return V

    def _diag(self, V):
        inc, dec = self._masks(V.shape[1])
        return ~((inc & (V < 0)) | (dec & (V > 0)))

    def jacobian_rows(self, V):
        u = self._diag(V).astype(float)
        return u[:, :, None] * np.eye(V.shape[1])[None]

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return Diagonal(self._diag(x[None, :])[0].astype(float))

    def support_rows(self, V, tol=1e-9):
        inc, dec = self._masks(V.shape[1])
        free = ~(inc | dec)
        scale = tol * (1.0 + np.abs(V).max(axis=1))
        bad = (
            np.any(V[:, inc] > scale[:, None], axis=1)
            | np.any(V[:, dec] < -scale[:, None], axis=1)
            | np.any(np.abs(V[:, free]) > scale[:, None], axis=1)
        )
        return np.where(bad, np.inf, 0.0)

    def describe(self):
        return {"kind": "monotone", "increasing": list(self.increasing),
                "decreasing": list(self.decreasing)}


@dataclass(frozen=True)
class Box(ConstraintSet):
    """Coordinatewise bounds ``lower <= xi <= upper``; infinite entries allowed."""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        lo, hi = np.broadcast_arrays(lo, hi)
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ValueError("box bounds must not be NaN")
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper entrywise")
        object.__setattr__(self, "lower", lo.copy())
        object.__setattr__(self, "upper", hi.copy())

    def check_dim(self, d):
        if self.lower.shape[0] not in (1, d):
            raise ValueError(f"box bounds have length {self.lower.shape[0]}, expected {d}")

    def _bounds(self, d):
        return np.broadcast_to(self.lower, (d,)), np.broadcast_to(self.upper, (d,))

    def project_rows(self, V):
        lo, hi = self._bounds(V.shape[1])
        return np.clip(V, lo, hi)

    def _diag(self, V):
        lo, hi = self._bounds(V.shape[1])
        return (V >= lo) & (V <= hi)

    def jacobian_rows(self, V):
        u = self._diag(V).astype(float)
        return u[:, :, None] * np.eye(V.shape[1])[None]

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return Diagonal(self._diag(x[None, :])[0].astype(float))

    def support_rows(self, V, tol=1e-9):
        lo, hi = self._bounds(V.shape[1])
        scale = tol * (1.0 + np.abs(V).max(axis=1))[:, None]
        pos = np.where(V > scale, V, 0.0)
        neg = np.where(V < -scale, V, 0.0)
        with np.errstate(invalid="ignore"):
            up = np.where(pos != 0, hi * pos, 0.0)
            dn = np.where(neg != 0, lo * neg, 0.0)
        return up.sum(axis=1) + dn.sum(axis=1)

    def describe(self):
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class LipschitzBall(ConstraintSet):
    """``{x : |x|_q <= radius}``; the fitted function is radius-Lipschitz in the dual norm."""
    q: float
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "q", _check_q(self.q))
        if not self.radius > 0:
            raise ValueError("Lipschitz radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def polyhedral(self):
        return self.q != 2.0

    def project_rows(self, V):
        return _ball_rows(V, self.q, self.radius)

    def jacobian_rows(self, V):
        return _ball_jacobian_rows(V, self.q, self.radius)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        L, q = self.radius, self.q
        if q == 2.0:
            nx = np.linalg.norm(x)
            if nx <= L:
                return Identity(len(x))
            return ScaledProjector(L / nx, x.copy())
        if np.isinf(q):
            return Diagonal((np.abs(x) <= L).astype(float))
        if np.abs(x).sum() <= L:
            return Identity(len(x))
        simp = project_simplex(np.abs(x) / L)
        return SignedSimplexJacobian(np.sign(x), simp != 0)

    def support_rows(self, V, tol=1e-9):
        p = dual_norm_exponent(self.q)
        return self.radius * np.linalg.norm(V, ord=p, axis=1)

    def describe(self):
        return {"kind": "lipschitz", "q": _q_str(self.q), "radius": self.radius}


def _q_str(q):
    return "inf" if np.isinf(q) else int(q)


def _ball_rows(V, q, radius):
    V = np.asarray(V, dtype=float)
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (V.shape[0],))
    if q == 2.0:
        nrm = np.linalg.norm(V, axis=1)
        scale = np.where(nrm > radius, radius / np.where(nrm > 0, nrm, 1.0), 1.0)
        return V * scale[:, None]
    if np.isinf(q):
        return np.clip(V, -radius[:, None], radius[:, None])
    return _l1_ball_rows(V, radius)


def _ball_jacobian_rows(V, q, radius):
    V = np.asarray(V, dtype=float)
    m, d = V.shape
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (m,))
    if q == 2.0:
        J = np.broadcast_to(np.eye(d), (m, d, d)).copy()
        nrm = np.linalg.norm(V, axis=1)
        out = nrm > radius
        if np.any(out):
            U = V[out] / nrm[out, None]
            J[out] = (radius[out] / nrm[out])[:, None, None] * (
                np.eye(d)[None] - U[:, :, None] * U[:, None, :])
        return J
    if np.isinf(q):
        u = (np.abs(V) <= radius[:, None]).astype(float)
        return u[:, :, None] * np.eye(d)[None]
    return _l1_ball_jacobian_rows(V, radius)


@dataclass(frozen=True)
class PerPoint(ConstraintSet):
    """A separate set ``D_i`` for every data point."""
    sets: tuple = field(default_factory=tuple)

    def __post_init__(self):
        sets = tuple(self.sets)
        if not sets:
            raise ValueError("PerPoint needs at least one set")
        if any(isinstance(s, PerPoint) for s in sets):
            raise ValueError("PerPoint sets cannot be nested")
        object.__setattr__(self, "sets", sets)

    def __len__(self):
        return len(self.sets)

    @property
    def polyhedral(self):
        return all(s.polyhedral for s in self.sets)

    def _ball_params(self):
        """(q, radii) when every set is a LipschitzBall with a common q."""
        first = self.sets[0]
        if isinstance(first, LipschitzBall) and all(
                isinstance(s, LipschitzBall) and s.q == first.q for s in self.sets):
            return first.q, np.array([s.radius for s in self.sets])
        return None

    def _check_rows(self, V):
        if V.shape[0] != len(self.sets):
            raise ValueError(f"PerPoint has {len(self.sets)} sets but got {V.shape[0]} blocks")

    def project_rows(self, V):
        V = np.asarray(V, dtype=float)
        self._check_rows(V)
        bp = self._ball_params()
        if bp is not None:
            return _ball_rows(V, bp[0], bp[1])
        return np.vstack([s.project_rows(V[i:i + 1]) for i, s in enumerate(self.sets)])

    def jacobian_rows(self, V):
        V = np.asarray(V, dtype=float)
        self._check_rows(V)
        bp = self._ball_params()
        if bp is not None:
            return _ball_jacobian_rows(V, bp[0], bp[1])
        return np.concatenate([s.jacobian_rows(V[i:i + 1]) for i, s in enumerate(self.sets)])

    def jacobian(self, x):
        raise TypeError("PerPoint has no single-block Jacobian; use blockwise_jacobian")

    def support_rows(self, V, tol=1e-9):
        self._check_rows(V)
        return np.concatenate([s.support_rows(V[i:i + 1], tol) for i, s in enumerate(self.sets)])

    def check_dim(self, d):
        for s in self.sets:
            s.check_dim(d)

    def describe(self):
        return {"kind": "perpoint", "sets": [s.describe() for s in self.sets]}


@dataclass(frozen=True)
class DataLipschitz:
    """Recipe for per-point Lipschitz balls estimated from the data.

    Not a set by itself; resolved to a :class:`PerPoint` once data are known.
    """
    k: int = 5
    p: float = 2.0

    def describe(self):
        return {"kind": "lipschitz-data", "k": self.k, "p": _q_str(_check_q(self.p))}


# ---------------------------------------------------------------------------
# Functional interface
# ---------------------------------------------------------------------------

def _as_block(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("input must be finite")
    return x[None, :]


def project(c: ConstraintSet, x) -> np.ndarray:
    """Euclidean projection of a single vector onto ``c``."""
    return c.project_rows(_as_block(x))[0]


def jacobian_element(c: ConstraintSet, x) -> JacobianElement:
    """Element of the generalized Jacobian of ``project(c, .)`` at ``x``.

    At kinks the "inactive" branch is chosen (identity-like entries).
    """
    return c.jacobian(np.asarray(x, dtype=float))


def conjugate_support(c: ConstraintSet, x, tol: float = 1e-9) -> float:
    """Support function ``sup_{z in c} <x, z>``; ``inf`` when unbounded."""
    return float(c.support_rows(_as_block(x), tol)[0])


def _blocks(xi, d):
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 2:
        return xi
    if xi.size % d:
        raise ValueError(f"length {xi.size} is not a multiple of d={d}")
    return xi.reshape(-1, d)


def blockwise_prox_p(c: ConstraintSet, xi, d: int | None = None) -> np.ndarray:
    """Project each length-d block of ``xi``; returns the same shape as ``xi``."""
    xi = np.asarray(xi, dtype=float)
    V = xi if xi.ndim == 2 else _blocks(xi, d)
    return c.project_rows(V).reshape(xi.shape)


def blockwise_jacobian(c: ConstraintSet, xi, d: int | None = None) -> list:
    """List of :class:`JacobianElement`, one per block."""
    V = _blocks(xi, d) if np.ndim(xi) == 1 else np.asarray(xi, dtype=float)
    if isinstance(c, PerPoint):
        if V.shape[0] != len(c.sets):
            raise ValueError("PerPoint list length does not match the number of blocks")
        return [s.jacobian(v) for s, v in zip(c.sets, V)]
    return [c.jacobian(v) for v in V]


# ---------------------------------------------------------------------------
# Text grammar
# ---------------------------------------------------------------------------

def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.split(";")], dtype=float)


def _parse_q(text: str) -> float:
    return _check_q(np.inf if text.strip().lower() in ("inf", "infinity") else float(text))


def parse_constraint(text: str, d: int | None = None):
    """Parse a constraint descriptor.

    Grammar::

        free
        monotone:+1,+2,-3        (1-based coordinates; + nondecreasing, - nonincreasing)
        box:L=0,U=1              (scalars broadcast; vectors as 0;0.5;1)
        lip:q=2,L=1.5            (q in 1, 2, inf)
        lip:data,k=5,p=2         (per-point radii estimated from data)
    """
    text = text.strip()
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    args = [a.strip() for a in rest.split(",") if a.strip()] if rest else []
    if kind == "free":
        if args:
            raise ValueError("'free' takes no arguments")
        return Free()
    if kind == "monotone":
        inc, dec = [], []
        for a in args:
            sign, num = a[0], a[1:]
            if sign not in "+-" or not num.isdigit() or int(num) < 1:
                raise ValueError(f"bad monotone entry {a!r}; use +k or -k with k >= 1")
            (inc if sign == "+" else dec).append(int(num) - 1)
        if not args:
            raise ValueError("monotone needs at least one coordinate")
        c = Monotone(tuple(inc), tuple(dec))
    elif kind == "box":
        kv = dict(_split_kv(a) for a in args)
        unknown = set(kv) - {"L", "U"}
        if unknown:
            raise ValueError(f"unknown box keys {sorted(unknown)}")
        lo = _parse_vector(kv.get("L", "-inf"))
        hi = _parse_vector(kv.get("U", "inf"))
        c = Box(lo, hi)
    elif kind == "lip":
        if args and args[0] == "data":
            kv = dict(_split_kv(a) for a in args[1:])
            unknown = set(kv) - {"k", "p"}
            if unknown:
                raise ValueError(f"unknown lip:data keys {sorted(unknown)}")
            k = int(kv.get("k", 5))
            if k < 1:
                raise ValueError("k must be positive")
            return DataLipschitz(k=k, p=_parse_q(kv.get("p", "2")))
        kv = dict(_split_kv(a) for a in args)
        if set(kv) != {"q", "L"}:
            raise ValueError("lip needs exactly q=... and L=...")
        c = LipschitzBall(_parse_q(kv["q"]), float(kv["L"]))
    else:
        raise ValueError(f"unknown constraint kind {kind!r}")
    if d is not None:
        c.check_dim(d)
    return c


def _split_kv(a: str):
    k, sep, v = a.partition("=")
    if not sep:
        raise ValueError(f"expected key=value, got {a!r}")
    return k.strip(), v.strip()


def constraint_from_description(desc: dict):
    """Inverse of ``describe()``."""
    kind = desc["kind"]
    if kind == "free":
        return Free()
    if kind == "monotone":
        return Monotone(tuple(desc["increasing"]), tuple(desc["decreasing"]))
    if kind == "box":
        return Box(np.array(desc["lower"], dtype=float), np.array(desc["upper"], dtype=float))
    if kind == "lipschitz":
        return LipschitzBall(_parse_q(str(desc["q"])), desc["radius"])
    if kind == "perpoint":
        return PerPoint(tuple(constraint_from_description(s) for s in desc["sets"]))
    if kind == "lipschitz-data":
        return DataLipschitz(int(desc["k"]), _parse_q(str(desc["p"])))
    raise ValueError(f"unknown constraint kind {kind!r}")


def per_point_balls(q, radii: Sequence[float]) -> PerPoint:
    return PerPoint(tuple(LipschitzBall(q, float(r)) for r in radii))
