"""Command line interface: ``shapereg {fit,predict,bench,smooth}``.

Exit codes: 0 success / converged, 2 iteration or time cap reached (the best
iterate is still written), 1 input or usage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from contextlib import nullcontext

import numpy as np

from .admm import AdmmConfig, admm_fit
from .constraints import parse_constraint
from .data import TEST_FUNCTIONS, default_constraint, generate_synthetic, load_csv, standardize
from .estimator import load_model, moreau_smooth, predict_batch, save_model
from .palm import PalmConfig, SsnConfig, palm_fit
from .pricing import (BasketParams, basket_gradient_bounds, mc_basket_values,
                      sample_basket_data)
from .regressor import resolve_constraint

log = logging.getLogger("shapereg")

EXIT_OK, EXIT_INPUT, EXIT_CAP = 0, 1, 2
DEFAULT_SEED = 42

CONSTRAINT_HELP = (
    "gradient constraint: free | monotone:+1,-2 (1-based; + nondecreasing) | "
    "box:L=0,U=1 (vectors as 0;0.5) | lip:q=2,L=1.5 (q in 1,2,inf) | lip:data,k=5,p=2. "
    "With --standardize, raw-unit box bounds on coordinate l are scaled by "
    "norm(x_l)/norm(y); Lipschitz radii need --bounds-units standardized unless "
    "all predictor rows have equal norm")


class InputError(Exception):
    pass


def _threads(value):
    if value is None:
        env = os.environ.get("SHAPEREG_THREADS")
        value = int(env) if env else 0
    if value and value > 0:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=value)
    return nullcontext()


def _solve(p, c, solver, tol, max_time, max_iter, trace=None, **kw):
    if solver == "palm":
        cfg = PalmConfig(tol=tol, max_time_secs=max_time,
                         **({"max_outer": max_iter} if max_iter else {}))
        return palm_fit(p, c, cfg, SsnConfig(), trace=trace, **kw)
    if solver == "admm":
        cfg = AdmmConfig(tol=tol, max_time_secs=max_time,
                         **({"max_iters": max_iter} if max_iter else {}))
        return admm_fit(p, c, cfg, trace=trace, **kw)
    raise InputError(f"unknown solver {solver!r}")


def _split(s):
    return [t.strip() for t in s.split(",") if t.strip()] if s else None


def _kv_list(items, what):
    out = {}
    for it in items or []:
        k, sep, v = it.partition("=")
        if not sep:
            raise InputError(f"{what} must look like name=value, got {it!r}")
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    preds = _split(args.predictors)
    p = load_csv(args.data, args.response, preds, _kv_list(args.transform, "--transform"),
                 args.filter or ())
    record = None
    if args.standardize:
        p, record = standardize(p)
    c, raw_c = resolve_constraint(args.constraint, p, record, args.bounds_units)
    desc = (raw_c if raw_c is not None else c).describe()
    if raw_c is None:
        desc = dict(desc, units="standardized")
    model, report = _solve(p, c, args.solver, args.tol, args.max_time, args.max_iter,
                           trace=args.trace, standardization=record, raw_constraint=raw_c,
                           constraint_desc=desc)
    header = load_csv_header(args.data)
    features = preds or [h for h in header if h != args.response]
    meta = dict(model.meta, features=features, response=args.response)
    model = type(model)(model.theta_hat, model.xi_hat, model.anchors, model.constraint,
                        model.standardization, meta)
    save_model(model, args.out)
    print(report.summary())
    return EXIT_OK if report.converged else EXIT_CAP


def load_csv_header(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [h.strip() for h in next(csv.reader(fh))]


# ---------------------------------------------------------------------------
# predict / smooth
# ---------------------------------------------------------------------------

def _read_queries(path, model):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    feats = model.meta.get("features")
    if feats and all(f in header for f in feats):
        cols = [header.index(f) for f in feats]
    elif len(header) == model.d:
        cols = list(range(model.d))
    else:
        raise InputError(f"{path}: need columns {feats or model.d}")
    try:
        Q = np.array([[float(r[i]) for i in cols] for r in rows[1:] if r], dtype=float)
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: bad query row ({exc})") from None
    return Q.reshape(-1, model.d), [header[i] for i in cols]


def _write_csv(path, header, rows):
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_predict(args) -> int:
    model = load_model(args.model)
    Q, names = _read_queries(args.query, model)
    yhat = predict_batch(model, Q.T)
    if args.smooth is None:
        _write_csv(args.out, [*names, "yhat"], [[*q, v] for q, v in zip(Q, yhat)])
        return EXIT_OK
    res = [moreau_smooth(model, q, args.smooth) for q in Q]
    header = [*names, "yhat", "smooth", *[f"grad_{i + 1}" for i in range(model.d)]]
    _write_csv(args.out, header, [[*q, v, r.value, *r.gradient] for q, v, r in zip(Q, yhat, res)])
    return EXIT_OK


def cmd_smooth(args) -> int:
    """Grid evaluation of the model and its Moreau envelope, as plot data."""
    model = load_model(args.model)
    if args.query:
        Q, names = _read_queries(args.query, model)
    else:
        if model.d > 2:
            raise InputError("grid output supports d <= 2; pass --query for higher dimensions")
        lo, hi = model.anchors.min(axis=1), model.anchors.max(axis=1)
        axes = [np.linspace(lo[i], hi[i], args.num) for i in range(model.d)]
        Q = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        names = model.meta.get("features") or [f"x{i + 1}" for i in range(model.d)]
    yhat = predict_batch(model, Q.T)
    res = [moreau_smooth(model, q, args.tau) for q in Q]
    header = [*names, "yhat", "smooth", *[f"grad_{i + 1}" for i in range(model.d)]]
    _write_csv(args.out, header, [[*q, v, r.value, *r.gradient] for q, v, r in zip(Q, yhat, res)])
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def run_synthetic_bench(fn, d, n, snr, solvers, seed, tol=1e-6, max_time=7200.0,
                        max_iter=None, constraint="auto"):
    p, info = generate_synthetic(fn, d, n, snr, seed=seed, return_info=True)
    ps, record = standardize(p)
    if constraint == "auto":
        c_raw = default_constraint(fn, d, info.params)
        # the table constraints describe the function on raw inputs
        try:
            c = record.constraint_to_std(c_raw)
        except ValueError:
            log.warning("%s bound has no standardized form for unequal row scales; "
                        "applying it to standardized gradients as given", fn)
            c = c_raw
    else:
        c, _ = resolve_constraint(constraint, ps, None)
    rows = []
    for s in solvers:
        model, rep = _solve(ps, c, s, tol, max_time, max_iter)
        rows.append({"solver": s, "d": d, "n": n, "iters": rep.iterations,
                     "inner_iters": rep.inner_iterations, "time_secs": rep.time_secs,
                     "R_KKT": rep.R_KKT, "objective": rep.objective,
                     "termination": rep.termination})
    return rows


def run_basket_bench(M, sizes, seed, test_points=200, paths=100_000, solver="palm",
                     tol=1e-6, max_time=7200.0):
    params = BasketParams(M=M)
    ss = np.random.SeedSequence(seed)
    s_test, s_mc, *s_train = ss.spawn(2 + len(sizes))
    test = np.random.default_rng(s_test).uniform(0.0, 5 * params.K, size=(M, test_points))
    truth, _ = mc_basket_values(test, params, paths, seed=s_mc)
    rows = []
    for n, s in zip(sizes, s_train):
        p = sample_basket_data(n, params, seed=s)
        ps, record = standardize(p)
        for label, c in (("UC", parse_constraint("free")),
                         ("SC", basket_gradient_bounds(params.weights))):
            t0 = time.perf_counter()
            # fit in standardized units; the model comes back in raw units
            model, rep = _solve(ps, record.constraint_to_std(c), solver, tol, max_time, None,
                                standardization=record, raw_constraint=c)
            elapsed = time.perf_counter() - t0
            mse = float(np.mean((predict_batch(model, test) - truth) ** 2))
            rows.append({"model": label, "num_data": n, "MSE": mse, "time": elapsed,
                         "termination": rep.termination})
    return rows


def cmd_bench(args) -> int:
    seed = DEFAULT_SEED if args.seed is None else args.seed
    if args.suite == "synthetic":
        solvers = ["palm", "admm"] if args.solver == "both" else [args.solver]
        rows = run_synthetic_bench(args.fn, args.d, args.n, args.snr, solvers, seed, args.tol,
                                   args.max_time, args.max_iter, args.constraint or "auto")
        fields = ["solver", "d", "n", "iters", "inner_iters", "time_secs", "R_KKT",
                  "objective", "termination"]
    elif args.suite == "basket":
        sizes = [int(v) for v in _split(args.sizes)]
        solver = "palm" if args.solver == "both" else args.solver
        rows = run_basket_bench(args.M, sizes, seed, args.test_points, args.paths, solver,
                                args.tol, args.max_time)
        fields = ["model", "num_data", "MSE", "time", "termination"]
    else:
        raise InputError(f"unknown suite {args.suite!r}")
    _write_csv(args.out, fields, [[r[f] for f in fields] for r in rows])
    capped = any(r["termination"] != "converged" for r in rows)
    return EXIT_CAP if capped else EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(sp):
    sp.add_argument("--config", help="key=value file; keys are the long option names")
    sp.add_argument("--threads", type=int, default=None,
                    help="BLAS threads (0 = library default; env SHAPEREG_THREADS)")
    sp.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    sp.add_argument("-v", "--verbose", action="store_true")


def _solver_opts(sp, solvers=("palm", "admm")):
    sp.add_argument("--solver", choices=solvers, default="palm")
    sp.add_argument("--tol", type=float, default=1e-6, help="target for max(R_P, R_D, R_C)")
    sp.add_argument("--max-time", type=float, default=7200.0, help="seconds")
    sp.add_argument("--max-iter", type=int, default=None, help="outer iteration cap")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shapereg", description="Shape-constrained convex regression")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model to a CSV file")
    _common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--response", required=True)
    f.add_argument("--predictors", help="comma-separated predictor columns (default: all others)")
    f.add_argument("--transform", action="append", help="name=spec with spec x, log(x), B^x, x^P")
    f.add_argument("--filter", action="append", help="row filter such as 'age < 70'")
    f.add_argument("--constraint", default="free", help=CONSTRAINT_HELP)
    _solver_opts(f)
    f.add_argument("--standardize", action="store_true")
    f.add_argument("--bounds-units", choices=("raw", "standardized"), default="raw")
    f.add_argument("--trace", help="per-iteration CSV log")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="evaluate a saved model")
    _common(pr)
    pr.add_argument("--model", required=True)
    pr.add_argument("--query", required=True)
    pr.add_argument("--out", default="-")
    pr.add_argument("--smooth", type=float, default=None, metavar="TAU",
                    help="also emit the Moreau envelope and its gradient")
    pr.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench", help="synthetic or basket-option benchmarks")
    _common(b)
    b.add_argument("--suite", choices=("synthetic", "basket"), required=True)
    b.add_argument("--fn", choices=TEST_FUNCTIONS, default="exp")
    b.add_argument("--d", type=int, default=10)
    b.add_argument("--n", type=int, default=100)
    b.add_argument("--snr", type=float, default=3.0)
    b.add_argument("--constraint", default=None, help="override the test function's constraint")
    b.add_argument("--M", type=int, default=5)
    b.add_argument("--sizes", default="200,400,600")
    b.add_argument("--test-points", type=int, default=200)
    b.add_argument("--paths", type=int, default=100_000)
    _solver_opts(b, ("palm", "admm", "both"))
    b.add_argument("--out", default="-")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("smooth", help="grid values of a model and its Moreau envelope")
    _common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--tau", type=float, required=True)
    s.add_argument("--query", help="CSV of points (default: grid over the anchors' box)")
    s.add_argument("--num", type=int, default=101, help="grid points per axis")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_smooth)
    return ap


def _read_config(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            k, sep, v = line.partition("=")
            if not sep:
                raise InputError(f"{path}:{lineno}: expected key=value")
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _config_path(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser, command, path):
    """Install config values as defaults of the subcommand; flags still win."""
    sub = parser._subparsers._group_actions[0].choices[command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in _read_config(path).items():
        if key not in actions or key in ("config", "help"):
            raise InputError(f"{path}: unknown key {key!r}")
        a = actions[key]
        try:
            if isinstance(a, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(a, argparse._AppendAction):
                defaults[key] = [raw]
            else:
                defaults[key] = a.type(raw) if a.type else raw
        except ValueError:
            raise InputError(f"{path}: bad value for {key!r}: {raw!r}") from None
        if a.choices is not None and defaults[key] not in a.choices:
            raise InputError(f"{path}: {key} must be one of {sorted(a.choices)}")
        a.required = False
    sub.set_defaults(**defaults)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = _config_path(argv)
        if cfg and argv and argv[0] in ("fit", "predict", "bench", "smooth"):
            _apply_config(parser, argv[0], cfg)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    except (InputError, OSError) as exc:
        print(f"shapereg: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        with _threads(args.threads):
            return args.func(args)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    except (InputError, ValueError, OSError, KeyError) as exc:
        print(f"shapereg: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
