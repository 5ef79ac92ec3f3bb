"""Pieces shared by both solvers: trace sinks and model finalization."""
from __future__ import annotations

import csv
import io
from typing import Optional

import numpy as np

from .constraints import ConstraintSet, PerPoint
from .problem import FittedModel


class TraceSink:
    """Write per-iteration records to a CSV file or stream."""

    def __init__(self, target, fields):
        self._own = False
        if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
            target = open(target, "w", newline="", encoding="utf-8")
            self._own = True
        self._fh = target
        self.fields = list(fields)
        self._w = csv.DictWriter(target, fieldnames=self.fields)
        self._w.writeheader()

    def write(self, rec: dict):
        self._w.writerow({k: rec.get(k, "") for k in self.fields})

    def close(self):
        if self._own:
            self._fh.close()


def open_sink(trace, fields) -> Optional[TraceSink]:
    if trace is None:
        return None
    if isinstance(trace, TraceSink):
        return trace
    return TraceSink(trace, fields)


def _pieces_at_anchors(theta, Xi, Xt):
    b = theta - np.einsum("ij,ij->i", Xi, Xt)
    V = b[None, :] + Xt @ Xi.T  # V[i, j] = piece j at X_i
    return V


def finalize_model(theta, xi, X, c: ConstraintSet, *, standardization=None,
                   raw_constraint: ConstraintSet | None = None,
                   constraint_desc: dict | None = None, meta: dict | None = None) -> FittedModel:
    """Turn a solver iterate into a model that interpolates its own anchors.

    Slopes are projected onto the constraint set.  When a standardization
    record is supplied the model is mapped back to raw units (and projected
    onto ``raw_constraint`` when given).  Finally every anchor value is reset
    to the max-affine value there; a piece that is beaten at its own anchor is
    replaced by the winning piece, which leaves the function's set of pieces a
    subset of the original one.  Under per-point sets the winner's slope may
    be disallowed at that point; the piece is then raised instead.
    """
    d, n = np.shape(X)
    theta = np.array(theta, dtype=float)
    Xi = c.project_rows(np.asarray(xi, dtype=float).reshape(n, d))
    anchors = np.array(X, dtype=float)
    target = c
    if standardization is not None:
        theta = standardization.theta_to_raw(theta)
        Xi = standardization.slopes_to_raw(Xi)
        anchors = standardization.X_to_raw(anchors)
        target = raw_constraint
        if target is not None:
            Xi = target.project_rows(Xi)
    Xt = anchors.T
    check, to_check = target, (lambda r: r)
    if check is None and standardization is not None:
        check, to_check = c, standardization.slopes_to_std
    idx = np.arange(n)
    new_theta, new_Xi = theta.copy(), Xi.copy()
    # Copying the winning piece never creates a new violation; lifting a piece
    # (when the winner's slope is not allowed at that point) can, so repeat
    # until no piece beats another at its anchor.
    for _ in range(n + 1):
        V = _pieces_at_anchors(new_theta, new_Xi, Xt)
        k = np.argmax(V, axis=1)
        vals = V[idx, k]
        swap = (k != idx) & (np.diag(V) < vals)
        new_theta = np.maximum(new_theta, vals)
        if not np.any(swap):
            break
        if isinstance(check, PerPoint):
            for i in np.flatnonzero(swap):
                cand = to_check(new_Xi[k[i]][None, :])
                if check.sets[i].contains_rows(cand, 0.0)[0]:
                    new_Xi[i] = new_Xi[k[i]]
        else:
            new_Xi[swap] = new_Xi[k[swap]]
    return FittedModel(new_theta, new_Xi.ravel(), anchors, constraint=constraint_desc,
                       standardization=standardization, meta=dict(meta or {}))
