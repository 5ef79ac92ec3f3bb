import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import dense_A, dense_B
from shapereg.operators import OperatorContext


@st.composite
def instance(draw, max_n=15, max_d=3):
    n = draw(st.integers(2, max_n))
    d = draw(st.integers(1, max_d))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return n, d, np.random.default_rng(seed)


def test_A_examples():
    ctx = OperatorContext(np.zeros((1, 2)))
    assert np.array_equal(ctx.apply_A([1.0, 0.0]), [[0.0, 1.0], [-1.0, 0.0]])
    assert np.array_equal(ctx.apply_A([1.0, 1.0]), np.zeros((2, 2)))
    assert np.array_equal(ctx.apply_A_adjoint(np.array([[0.0, 1.0], [0.0, 0.0]])), [1.0, -1.0])
    assert np.array_equal(ctx.apply_A_adjoint(np.ones((2, 2))), [0.0, 0.0])


def test_B_hand_example():
    ctx = OperatorContext(np.array([[0.0, 1.0]]))
    a, b = 2.0, 5.0
    assert np.array_equal(ctx.apply_B([a, b]), [[0.0, b], [-a, 0.0]])


@given(instance(max_n=20))
def test_operators_match_dense(inst):
    n, d, rng = inst
    X = rng.standard_normal((d, n))
    ctx = OperatorContext(X)
    A, B = dense_A(n), dense_B(X)
    th, xi, Z = rng.standard_normal(n), rng.standard_normal(n * d), rng.standard_normal((n, n))
    assert np.allclose(ctx.apply_A(th).ravel(), A @ th, atol=1e-12)
    assert np.allclose(ctx.apply_B(xi).ravel(), B @ xi, atol=1e-12)
    assert np.allclose(ctx.apply_A_adjoint(Z), A.T @ Z.ravel(), atol=1e-11)
    assert np.allclose(ctx.apply_B_adjoint(Z), B.T @ Z.ravel(), atol=1e-11)
    assert np.allclose(ctx.apply_A_adjoint(ctx.apply_A(th)), 2 * n * th - 2 * th.sum(), atol=1e-11)


@given(instance(max_n=20))
def test_adjoint_identities(inst):
    n, d, rng = inst
    ctx = OperatorContext(rng.standard_normal((d, n)))
    th, xi, Z = rng.standard_normal(n), rng.standard_normal(n * d), rng.standard_normal((n, n))
    lhs, rhs = np.sum(ctx.apply_A(th) * Z), th @ ctx.apply_A_adjoint(Z)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs)) * n
    lhs, rhs = np.sum(ctx.apply_B(xi) * Z), xi @ ctx.apply_B_adjoint(Z)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs)) * n


def test_theta_system_small_case():
    ctx = OperatorContext(np.zeros((1, 2)))
    # I + A^*A = [[3, -2], [-2, 3]] for n = 2, sigma = 1
    M = np.eye(2) + dense_A(2).T @ dense_A(2)
    assert np.allclose(M, [[3.0, -2.0], [-2.0, 3.0]])
    x = ctx.solve_theta_system(np.array([1.0, 0.0]), 1.0)
    assert np.allclose(x, [0.6, 0.4], atol=1e-15)
    assert np.allclose(ctx.solve_theta_system(np.ones(2), 3.0), np.ones(2))


@given(instance(max_n=30), st.floats(1e-3, 1e3))
def test_theta_system_inverse(inst, sigma):
    n, d, rng = inst
    ctx = OperatorContext(rng.standard_normal((d, n)))
    rhs = rng.standard_normal(n)
    x = ctx.solve_theta_system(rhs, sigma)
    r = x + sigma * ctx.apply_A_adjoint(ctx.apply_A(x)) - rhs
    assert np.linalg.norm(r) <= 1e-10 * (1 + sigma * n) * np.linalg.norm(rhs)


def test_theta_system_rejects_bad_sigma():
    with pytest.raises(ValueError):
        OperatorContext(np.zeros((1, 2))).solve_theta_system(np.ones(2), 0.0)


def test_xi_system_examples():
    ctx = OperatorContext(np.array([[0.0, 1.0]]))
    assert np.allclose(ctx.gram_blocks[:, 0, 0], [1.0, 1.0])
    assert np.allclose(ctx.solve_xi_system([2.0, 4.0]), [1.0, 2.0], atol=1e-15)
    ctx0 = OperatorContext(np.zeros((2, 3)))
    rhs = np.arange(6.0)
    assert np.allclose(ctx0.solve_xi_system(rhs), rhs)


@given(instance(max_n=25))
def test_xi_system_inverse_and_gram(inst):
    n, d, rng = inst
    X = rng.standard_normal((d, n))
    ctx = OperatorContext(X)
    B = dense_B(X)
    G = B.T @ B
    for j in range(n):
        blk = G[j * d:(j + 1) * d, j * d:(j + 1) * d]
        assert np.allclose(ctx.gram_blocks[j], blk, atol=1e-10)
    rhs = rng.standard_normal(n * d)
    x = ctx.solve_xi_system(rhs)
    assert np.linalg.norm(x + B.T @ (B @ x) - rhs) <= 1e-10 * (1 + np.linalg.norm(rhs))
    assert np.allclose(ctx.apply_xi_system(x), rhs, atol=1e-10)


@given(instance(max_n=15))
def test_structured_products_match_dense(inst):
    n, d, rng = inst
    X = rng.standard_normal((d, n))
    ctx = OperatorContext(X)
    W = rng.integers(0, 2, size=(n, n))
    A, B = dense_A(n), dense_B(X)
    D = np.diag(W.ravel().astype(float))
    gp = ctx.structured_gram_products(W)
    assert np.allclose(gp.AWA, A.T @ D @ A, atol=1e-10)
    assert np.allclose(gp.AWB_dense(), A.T @ D @ B, atol=1e-10)
    th, xi = rng.standard_normal(n), rng.standard_normal(n * d)
    assert np.allclose(gp.AWB_matvec(xi), A.T @ D @ B @ xi, atol=1e-10)
    assert np.allclose(gp.BWA_matvec(th), B.T @ D @ A @ th, atol=1e-10)
    BWB = B.T @ D @ B
    assert np.allclose(gp.BWB_matvec(xi), BWB @ xi, atol=1e-10)
    for j in range(n):
        sl = slice(j * d, (j + 1) * d)
        blk = gp.BWB_blocks[j]
        assert np.allclose(blk, BWB[sl, sl], atol=1e-10)
        assert np.allclose(blk, blk.T) and np.linalg.eigvalsh(blk).min() >= -1e-10
    # the B-B part is block diagonal
    off = BWB.copy()
    for j in range(n):
        off[j * d:(j + 1) * d, j * d:(j + 1) * d] = 0.0
    assert np.allclose(off, 0.0, atol=1e-10)


def test_structured_products_extreme_masks():
    rng = np.random.default_rng(0)
    n, d = 6, 2
    ctx = OperatorContext(rng.standard_normal((d, n)))
    full = ctx.structured_gram_products(np.ones((n, n)))
    assert np.allclose(full.AWA, 2 * n * np.eye(n) - 2 * np.ones((n, n)))
    zero = ctx.structured_gram_products(np.zeros((n, n)))
    assert np.allclose(zero.AWA, 0.0) and np.allclose(zero.BWB_blocks, 0.0)
    assert np.allclose(zero.AWB_dense(), 0.0)


def test_structured_products_reject_non_binary():
    ctx = OperatorContext(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        ctx.structured_gram_products(np.full((3, 3), 0.5))
    with pytest.raises(ValueError):
        ctx.structured_gram_products(np.ones((2, 2)))


def test_dimension_checks():
    ctx = OperatorContext(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ctx.apply_A(np.ones(4))
    with pytest.raises(ValueError):
        ctx.apply_B(np.ones(5))
    with pytest.raises(ValueError):
        ctx.apply_A_adjoint(np.ones((2, 2)))
    with pytest.raises(ValueError):
        OperatorContext(np.array([[0.0, np.nan]]))
