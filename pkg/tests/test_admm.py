import csv

import numpy as np
import pytest

from oracles import VARIANTS, dense_A, dense_B, make_constraint, qp_reference, random_instance
from shapereg.admm import AdmmConfig, admm_fit, admm_initial_state, admm_step
from shapereg.constraints import Box, Free, LipschitzBall
from shapereg.problem import ProblemData


def dense_admm_step(p, c, theta, xi, u, v, sigma, tau):
    """Straight transcription of one sweep using dense A, B and generic solves."""
    n, d = p.n, p.d
    A, B = dense_A(n), dense_B(p.X)
    uf = u.ravel()
    y = c.project_rows((xi - v / sigma).reshape(n, d)).ravel()
    eta = np.minimum(uf / sigma - A @ theta - B @ xi, 0.0)
    M = np.eye(n) + sigma * A.T @ A

    def theta_update(xi_):
        return np.linalg.solve(M, p.Y + A.T @ uf - sigma * A.T @ (eta + B @ xi_))

    th1 = theta_update(xi)
    N = sigma * (np.eye(n * d) + B.T @ B)
    xi1 = np.linalg.solve(N, B.T @ uf + v - sigma * B.T @ (eta + A @ th1) + sigma * y)
    th2 = theta_update(xi1)
    u1 = uf - tau * sigma * (eta + A @ th2 + B @ xi1)
    v1 = v - tau * sigma * (xi1 - y)
    return th2, xi1, y, eta.reshape(n, n), u1.reshape(n, n), v1


@pytest.mark.parametrize("kind", ["free", "box", "l2"])
def test_single_step_matches_dense_transcription(kind):
    rng = np.random.default_rng(7)
    p = random_instance(rng, 6, 2)
    c = make_constraint(kind, 2, rng, 6)
    ctx = p.operators()
    st = admm_initial_state(p, ctx, 1.3)
    # move away from the trivial start so every term is active
    st.primal.xi[:] = rng.standard_normal(12)
    st.dual.u[:] = rng.uniform(0, 1, (6, 6))
    st.dual.v[:] = rng.standard_normal(12)
    before = st.primal.theta.copy(), st.dual.u.copy()
    new = admm_step(st, p, c, ctx, 1.618)
    ref = dense_admm_step(p, c, st.primal.theta, st.primal.xi, st.dual.u, st.dual.v, 1.3, 1.618)
    got = (new.primal.theta, new.primal.xi, new.primal.y, new.primal.eta, new.dual.u, new.dual.v)
    for a, b in zip(got, ref):
        assert np.allclose(a, b, atol=1e-10)
    assert np.array_equal(st.primal.theta, before[0]) and np.array_equal(st.dual.u, before[1])


def test_toy_step_from_start(toy):
    ctx = toy.operators()
    st = admm_initial_state(toy, ctx, 1.0)
    assert np.array_equal(st.primal.theta, toy.Y)
    assert np.allclose(st.primal.eta, np.minimum(-ctx.apply_A(toy.Y), 0.0))
    new = admm_step(st, toy, Free(), ctx)
    ref = dense_admm_step(toy, Free(), toy.Y, np.zeros(3), np.zeros((3, 3)), np.zeros(3), 1.0, 1.618)
    assert np.allclose(new.primal.theta, ref[0], atol=1e-12)


def test_toy_converges(toy):
    m, rep = admm_fit(toy, Free(), AdmmConfig(tol=1e-8))
    assert rep.converged
    assert np.allclose(m.theta_hat, 1.0 / 3.0, atol=1e-6)
    assert rep.objective == pytest.approx(1.0 / 3.0, abs=1e-6)


@pytest.mark.parametrize("kind", VARIANTS)
def test_matches_conic_reference(kind):
    rng = np.random.default_rng(VARIANTS.index(kind))
    p = random_instance(rng, 9, 2)
    c = make_constraint(kind, 2, rng, 9)
    m, rep = admm_fit(p, c, AdmmConfig(tol=1e-7))
    ref, _ = qp_reference(p, c)
    assert rep.converged
    assert abs(rep.objective - ref) / (1 + abs(ref)) <= 1e-6
    assert m.interpolation_error() <= 1e-8
    assert np.all(c.contains_rows(m.slopes, 1e-12))
    # weak/strong duality at the returned point
    assert abs(rep.objective - rep.dual_objective) / (1 + rep.objective) <= 100 * 1e-6


def test_cap_hit_returns_best_iterate(tmp_path):
    rng = np.random.default_rng(0)
    p = random_instance(rng, 10, 2)
    trace = tmp_path / "t.csv"
    m, rep = admm_fit(p, Free(), AdmmConfig(max_iters=5), trace=str(trace))
    assert rep.termination == "max_iters" and not rep.converged
    assert rep.iterations == 5
    best = min(max(h["R_P"], h["R_D"], h["R_C"]) for h in rep.history)
    assert rep.R_KKT == best
    rows = list(csv.DictReader(open(trace)))
    assert len(rows) == 5 and set(rows[0]) >= {"iter", "R_P", "R_D", "R_C", "sigma"}


def test_sigma_adaptation_changes_sigma():
    p = ProblemData(np.linspace(0, 1, 12)[None, :], np.linspace(0, 1, 12) ** 2 * 100)
    _, rep = admm_fit(p, LipschitzBall(2, 1.0), AdmmConfig(max_iters=400, tol=1e-12))
    sigmas = {h["sigma"] for h in rep.history}
    assert len(sigmas) > 1
    _, rep = admm_fit(p, LipschitzBall(2, 1.0),
                      AdmmConfig(max_iters=200, tol=1e-12, sigma_adapt=False))
    assert {h["sigma"] for h in rep.history} == {1.0}


def test_warm_start_from_solution(toy):
    _, rep, state = admm_fit(toy, Free(), AdmmConfig(tol=1e-9), return_state=True)
    _, rep2 = admm_fit(toy, Free(), AdmmConfig(tol=1e-8), init=(state.primal, state.dual))
    assert rep2.iterations == 1 and rep2.converged


@pytest.mark.parametrize("kw", [dict(sigma=0), dict(tau=1.7), dict(tau=0), dict(max_iters=0),
                                dict(adapt_ratio=1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        AdmmConfig(**kw)


def test_dimension_mismatch_rejected():
    p = ProblemData(np.zeros((2, 3)) + np.arange(3), np.arange(3.0))
    with pytest.raises(ValueError):
        admm_fit(p, Box(np.zeros(3), np.ones(3)))
