"""scikit-learn style front end."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .admm import AdmmConfig, admm_fit
from .constraints import ConstraintSet, DataLipschitz, parse_constraint
from .data import standardize as _standardize
from .estimator import moreau_smooth, predict_batch
from .lipschitz import build_perpoint_problem, estimate_lipschitz
from .palm import PalmConfig, SsnConfig, palm_fit
from .problem import ProblemData

__all__ = ["ConvexRegressor", "resolve_constraint"]


def resolve_constraint(constraint, p: ProblemData, record=None, bounds_units="raw"):
    """Turn a descriptor into ``(solver_set, raw_set)`` for the (possibly standardized) data.

    ``raw_set`` is the same restriction expressed on raw-unit gradients, or
    ``None`` when it has no representation there.
    """
    c = parse_constraint(constraint, p.d) if isinstance(constraint, str) else constraint
    if c is None:
        c = parse_constraint("free")
    if isinstance(c, DataLipschitz):
        L = estimate_lipschitz(p, c.k, c.p)
        c = build_perpoint_problem(p, L, c.p)
        return c, (record.constraint_to_raw(c) if record is not None else c)
    if not isinstance(c, ConstraintSet):
        raise TypeError("constraint must be a descriptor string or a ConstraintSet")
    c.check_dim(p.d)
    if record is None:
        return c, c
    if bounds_units == "raw":
        return record.constraint_to_std(c), c
    if bounds_units == "standardized":
        return c, record.constraint_to_raw(c)
    raise ValueError("bounds_units must be 'raw' or 'standardized'")


class ConvexRegressor(RegressorMixin, BaseEstimator):
    """Least-squares convex regression with an optional gradient constraint.

    Parameters
    ----------
    constraint : str or ConstraintSet, default="free"
        ``free``, ``monotone:+1,-2``, ``box:L=0,U=1``, ``lip:q=2,L=1.5`` or
        ``lip:data,k=5,p=2``.
    solver : {"palm", "admm"}
    standardize : bool, default=False
        Center and scale X rows and y to unit norm before solving.  The fitted
        model is always returned in raw units.
    bounds_units : {"raw", "standardized"}
        Units in which box / ball bounds are given when ``standardize`` is on.
    tol : float
        Target for the largest normalized KKT residual.
    max_iter : int or None
        Outer iteration cap (solver default when None).
    max_time : float
        Wall-clock cap in seconds.
    trace : path or None
        CSV file receiving one line per iteration.

    Attributes
    ----------
    model_ : FittedModel
    report_ : SolverReport
    constraint_ : ConstraintSet used by the solver
    """

    def __init__(self, constraint="free", solver="palm", standardize=False,
                 bounds_units="raw", tol=1e-6, max_iter=None, max_time=7200.0, trace=None):
        self.constraint = constraint
        self.solver = solver
        self.standardize = standardize
        self.bounds_units = bounds_units
        self.tol = tol
        self.max_iter = max_iter
        self.max_time = max_time
        self.trace = trace

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[0] < 2:
            raise ValueError("need at least two samples")
        if self.solver not in ("palm", "admm"):
            raise ValueError(f"unknown solver {self.solver!r}; use 'palm' or 'admm'")
        p = ProblemData(X.T, y)
        record = None
        if self.standardize:
            p, record = _standardize(p)
        c, raw_c = resolve_constraint(self.constraint, p, record, self.bounds_units)
        desc = (raw_c if raw_c is not None else c).describe()
        if raw_c is None:
            desc = dict(desc, units="standardized")
        kw = dict(trace=self.trace, standardization=record, raw_constraint=raw_c,
                  constraint_desc=desc)
        if self.solver == "palm":
            cfg = PalmConfig(tol=self.tol, max_time_secs=self.max_time,
                             **({"max_outer": self.max_iter} if self.max_iter else {}))
            model, report = palm_fit(p, c, cfg, SsnConfig(), **kw)
        else:
            cfg = AdmmConfig(tol=self.tol, max_time_secs=self.max_time,
                             **({"max_iters": self.max_iter} if self.max_iter else {}))
            model, report = admm_fit(p, c, cfg, **kw)
        self.model_, self.report_, self.constraint_ = model, report, c
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return predict_batch(self.model_, X.T)

    def smooth_predict(self, X, tau):
        """Moreau-smoothed values and gradients, shapes (m,) and (m, d)."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        res = [moreau_smooth(self.model_, x, tau) for x in X]
        return np.array([r.value for r in res]), np.array([r.gradient for r in res])
