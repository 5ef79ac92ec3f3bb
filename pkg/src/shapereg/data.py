"""Synthetic data, standardization and CSV loading."""
from __future__ import annotations

import csv
import math
import operator
import re
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .constraints import (Box, ConstraintSet, DataLipschitz, Free, LipschitzBall,
                          Monotone, PerPoint)
from .problem import ProblemData

__all__ = [
    "TEST_FUNCTIONS", "SyntheticInfo", "generate_synthetic", "make_test_function",
    "StandardizationRecord", "standardize", "load_csv", "default_constraint",
]

TEST_FUNCTIONS = ("exp", "relu", "softplus", "sqrtquad", "qform", "logsumexp", "maxsq")


@dataclass(frozen=True)
class SyntheticInfo:
    name: str
    psi: Callable[[np.ndarray], np.ndarray]
    params: dict
    noise_std: float
    clean: np.ndarray


def make_test_function(name: str, d: int, rng: np.random.Generator):
    """Return ``(psi, params)`` where ``psi`` maps a d x m array to m values."""
    if name == "exp":
        pvec = rng.standard_normal(d)
        return (lambda X: np.exp(pvec @ X)), {"p": pvec}
    if name == "relu":
        return (lambda X: np.maximum(X.sum(axis=0), 0.0)), {}
    if name == "softplus":
        return (lambda X: np.logaddexp(0.0, X.sum(axis=0))), {}
    if name == "sqrtquad":
        return (lambda X: np.sqrt(1.0 + np.sum(X * X, axis=0))), {}
    if name == "qform":
        U, _ = np.linalg.qr(rng.standard_normal((d, d)))
        lam = rng.uniform(0.5, 2.0, size=d)
        Q = (U * lam) @ U.T
        Q = 0.5 * (Q + Q.T)
        lam_max = float(np.linalg.eigvalsh(Q)[-1])
        return (lambda X: np.sqrt(np.maximum(np.einsum("im,ij,jm->m", X, Q, X), 0.0))), \
            {"Q": Q, "lambda_max": lam_max}
    if name == "logsumexp":
        def lse(X):
            Z = np.vstack([np.zeros((1, X.shape[1])), X])
            return np.logaddexp.reduce(Z, axis=0)
        return lse, {}
    if name == "maxsq":
        return (lambda X: 2.0 * np.abs(X).max(axis=0) + np.sum(X * X, axis=0)), {}
    raise ValueError(f"unknown test function {name!r}; choose from {', '.join(TEST_FUNCTIONS)}")


def default_constraint(name: str, d: int, params: Mapping | None = None) -> ConstraintSet:
    """The shape constraint each named test function satisfies."""
    params = params or {}
    if name in ("exp", "maxsq"):
        return Free()
    if name == "relu":
        return Monotone(tuple(range(d)), ())
    if name == "softplus":
        return Box(np.zeros(d), np.ones(d))
    if name == "sqrtquad":
        return LipschitzBall(np.inf, 1.0)
    if name == "qform":
        return LipschitzBall(2, params["lambda_max"])
    if name == "logsumexp":
        return LipschitzBall(1, 1.0)
    raise ValueError(f"unknown test function {name!r}")


def generate_synthetic(fn: str, d: int, n: int, snr: float = 3.0, seed=None,
                       return_info: bool = False):
    """Draw X uniformly on [-1, 1]^d and ``Y = psi(X) + noise``.

    Noise variance is the sample variance of the clean values divided by
    ``snr``; ``snr=inf`` gives noiseless data.  Independent streams for the
    function parameters, the predictors and the noise are spawned from
    ``seed`` so changing one does not shift the others.
    """
    if not snr > 0:
        raise ValueError("snr must be positive")
    if d < 1 or n < 2:
        raise ValueError("need d >= 1 and n >= 2")
    ss = np.random.SeedSequence(seed)
    s_fn, s_x, s_noise = ss.spawn(3)
    psi, params = make_test_function(fn, d, np.random.default_rng(s_fn))
    X = np.random.default_rng(s_x).uniform(-1.0, 1.0, size=(d, n))
    clean = psi(X)
    std = 0.0 if np.isinf(snr) else math.sqrt(np.var(clean) / snr)
    noise = np.random.default_rng(s_noise).standard_normal(n) * std
    p = ProblemData(X, clean + noise)
    if return_info:
        return p, SyntheticInfo(fn, psi, params, std, clean)
    return p


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardizationRecord:
    """Centering and unit-l2-norm scaling of every predictor row and of Y.

    Raw and standardized quantities are related by
    ``x_std = (x - x_mean) / x_scale`` and ``y = y_mean + y_scale * y_std``,
    so a raw slope in coordinate l equals ``y_scale / x_scale[l]`` times the
    standardized one.
    """
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    def X_to_std(self, X):
        X = np.asarray(X, dtype=float)
        return (X - self.x_mean[:, None]) / self.x_scale[:, None]

    def X_to_raw(self, X):
        X = np.asarray(X, dtype=float)
        return X * self.x_scale[:, None] + self.x_mean[:, None]

    def theta_to_raw(self, t):
        return self.y_mean + self.y_scale * np.asarray(t, dtype=float)

    def y_to_std(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_scale

    def slopes_to_raw(self, S):
        return np.asarray(S, dtype=float) * (self.y_scale / self.x_scale)

    def slopes_to_std(self, S):
        return np.asarray(S, dtype=float) * (self.x_scale / self.y_scale)

    def _ball_factor(self, what):
        s = self.x_scale
        if not np.allclose(s, s[0], rtol=1e-12, atol=0.0):
            raise ValueError(
                f"a Lipschitz ball {what} is a ball only when all predictor rows have the same "
                "scale; give the radius in standardized units (bounds_units='standardized') "
                "or fit without standardization")
        return float(s[0]) / self.y_scale

    def constraint_to_std(self, c):
        """Map a constraint on raw gradients to the equivalent on standardized ones."""
        if isinstance(c, (Free, Monotone, DataLipschitz)):
            return c
        if isinstance(c, Box):
            f = self.x_scale / self.y_scale
            with np.errstate(invalid="ignore"):
                return Box(np.broadcast_to(c.lower, f.shape) * f,
                           np.broadcast_to(c.upper, f.shape) * f)
        if isinstance(c, LipschitzBall):
            return LipschitzBall(c.q, c.radius * self._ball_factor("in raw units"))
        if isinstance(c, PerPoint):
            return PerPoint(tuple(self.constraint_to_std(s) for s in c.sets))
        raise TypeError(f"cannot map {type(c).__name__}")

    def constraint_to_raw(self, c):
        """Inverse of :meth:`constraint_to_std`; ``None`` when not representable."""
        if isinstance(c, (Free, Monotone)):
            return c
        if isinstance(c, Box):
            f = self.y_scale / self.x_scale
            return Box(np.broadcast_to(c.lower, f.shape) * f, np.broadcast_to(c.upper, f.shape) * f)
        if isinstance(c, LipschitzBall):
            try:
                return LipschitzBall(c.q, c.radius / self._ball_factor("in raw units"))
            except ValueError:
                return None
        if isinstance(c, PerPoint):
            mapped = [self.constraint_to_raw(s) for s in c.sets]
            return None if any(m is None for m in mapped) else PerPoint(tuple(mapped))
        return None

    def to_dict(self):
        return {"x_mean": self.x_mean.tolist(), "x_scale": self.x_scale.tolist(),
                "y_mean": self.y_mean, "y_scale": self.y_scale}

    @classmethod
    def from_dict(cls, dct):
        return cls(np.array(dct["x_mean"], dtype=float), np.array(dct["x_scale"], dtype=float),
                   float(dct["y_mean"]), float(dct["y_scale"]))


def _center_scale(v, label):
    m = float(np.mean(v))
    c = v - m
    s = float(np.linalg.norm(c))
    if s == 0.0:
        warnings.warn(f"{label} is constant; centering only", RuntimeWarning, stacklevel=3)
        s = 1.0
    return m, s


def standardize(p: ProblemData):
    """Center Y and each row of X and scale them to unit l2 norm."""
    d = p.d
    xm = np.empty(d)
    xs = np.empty(d)
    for l in range(d):
        xm[l], xs[l] = _center_scale(p.X[l], f"predictor row {l}")
    ym, ys = _center_scale(p.Y, "response")
    rec = StandardizationRecord(xm, xs, ym, ys)
    return ProblemData(rec.X_to_std(p.X), rec.y_to_std(p.Y)), rec


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

_OPS = {"<=": operator.le, ">=": operator.ge, "==": operator.eq, "!=": operator.ne,
        "<": operator.lt, ">": operator.gt}
_FILTER_RE = re.compile(r"^\s*([^<>=!]+?)\s*(<=|>=|==|!=|<|>)\s*(\S+)\s*$")


def parse_transform(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    """Predictor transforms: ``x``, ``log(x)``, ``B^x`` (e.g. ``1.2^x``), ``x^P``."""
    s = spec.replace(" ", "")
    if s == "x":
        return lambda v: v
    if s == "log(x)":
        return np.log
    m = re.fullmatch(r"([0-9.eE+-]+)\^x", s)
    if m:
        b = float(m.group(1))
        return lambda v: np.power(b, v)
    m = re.fullmatch(r"x\^([0-9.eE+-]+)", s)
    if m:
        e = float(m.group(1))
        return lambda v: np.power(v, e)
    raise ValueError(f"unknown transform {spec!r}; use x, log(x), B^x or x^P")


def load_csv(path, response: str, predictors: Sequence[str] | None = None,
             transforms: Mapping[str, str] | None = None,
             filters: Sequence[str] = ()) -> ProblemData:
    """Read a header CSV into ``ProblemData`` (rows are observations).

    ``filters`` are expressions like ``"age < 70"`` evaluated on raw values;
    rows failing any of them are dropped before transforms are applied.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise ValueError(f"{path}:{lineno}: non-numeric value {bad!r}") from None
    if predictors is None:
        predictors = [h for h in header if h != response]
    missing = [c for c in [response, *predictors] if c not in header]
    if missing:
        raise ValueError(f"{path}: missing column(s) {', '.join(missing)}; header is {header}")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    col = {h: i for i, h in enumerate(header)}
    keep = np.ones(data.shape[0], dtype=bool)
    for f in filters:
        m = _FILTER_RE.match(f)
        if not m or m.group(1) not in col:
            raise ValueError(f"bad row filter {f!r}; use '<column> <op> <number>'")
        keep &= _OPS[m.group(2)](data[:, col[m.group(1)]], float(m.group(3)))
    data = data[keep]
    if data.shape[0] < 2:
        raise ValueError(f"{path}: need at least two observations, got {data.shape[0]}")
    X = np.vstack([data[:, col[c]] for c in predictors])
    for name, spec in (transforms or {}).items():
        if name not in predictors:
            raise ValueError(f"transform given for unknown predictor {name!r}")
        i = list(predictors).index(name)
        X[i] = parse_transform(spec)(X[i])
    return ProblemData(X, data[:, col[response]])


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False
