import numpy as np
import pytest
from hypothesis import given, strategies as st

from shapereg.constraints import Box, Free, LipschitzBall, Monotone, per_point_balls
from shapereg.data import (TEST_FUNCTIONS, StandardizationRecord, default_constraint,
                           generate_synthetic, load_csv, make_test_function, parse_transform,
                           standardize)
from shapereg.problem import ProblemData


@pytest.mark.parametrize("fn", TEST_FUNCTIONS)
def test_synthetic_determinism_and_shapes(fn):
    a = generate_synthetic(fn, 3, 50, seed=11)
    b = generate_synthetic(fn, 3, 50, seed=11)
    c = generate_synthetic(fn, 3, 50, seed=12)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
    assert not np.array_equal(a.Y, c.Y)
    assert a.X.shape == (3, 50) and np.all(np.abs(a.X) <= 1)


@pytest.mark.parametrize("fn", TEST_FUNCTIONS)
def test_noiseless_limit_and_convexity(fn):
    p, info = generate_synthetic(fn, 3, 40, snr=np.inf, seed=0, return_info=True)
    assert np.array_equal(p.Y, info.psi(p.X))
    rng = np.random.default_rng(0)
    a, b = rng.uniform(-1, 1, (3, 500)), rng.uniform(-1, 1, (3, 500))
    assert np.all(info.psi(0.5 * (a + b)) <= 0.5 * (info.psi(a) + info.psi(b)) + 1e-12)


@pytest.mark.parametrize("fn", TEST_FUNCTIONS)
def test_default_constraint_holds_for_true_gradient(fn):
    p, info = generate_synthetic(fn, 3, 30, snr=np.inf, seed=4, return_info=True)
    c = default_constraint(fn, 3, info.params)
    rng = np.random.default_rng(1)
    h = 1e-6
    for x in rng.uniform(-1, 1, (50, 3)):
        g = np.array([(info.psi((x + h * e)[:, None]) - info.psi((x - h * e)[:, None]))[0] / (2 * h)
                      for e in np.eye(3)])
        assert c.contains_rows(g[None], 1e-6)[0]


def test_snr_law_of_large_numbers():
    p, info = generate_synthetic("softplus", 2, 10000, snr=3.0, seed=2, return_info=True)
    ratio = np.var(p.Y - info.clean) / np.var(info.clean)
    assert abs(ratio - 1 / 3) <= 0.1 / 3


def test_synthetic_streams_are_independent():
    # same seed: changing n keeps the function parameters
    _, a = generate_synthetic("qform", 4, 10, seed=9, return_info=True)
    _, b = generate_synthetic("qform", 4, 200, seed=9, return_info=True)
    assert np.array_equal(a.params["Q"], b.params["Q"])
    Q = a.params["Q"]
    assert np.allclose(Q, Q.T) and np.linalg.eigvalsh(Q).min() > 0
    assert a.params["lambda_max"] == pytest.approx(np.linalg.eigvalsh(Q).max())


def test_synthetic_errors():
    with pytest.raises(ValueError):
        generate_synthetic("nope", 2, 10)
    with pytest.raises(ValueError):
        generate_synthetic("exp", 2, 10, snr=0.0)
    with pytest.raises(ValueError):
        make_test_function("nope", 2, np.random.default_rng())


def test_standardize_hand_example():
    p = ProblemData(np.array([[0.0, 1.0, 5.0]]), np.array([1.0, 2.0, 3.0]))
    ps, rec = standardize(p)
    assert np.allclose(ps.Y, [-1 / np.sqrt(2), 0.0, 1 / np.sqrt(2)], atol=1e-15)
    assert rec.y_mean == 2.0 and rec.y_scale == pytest.approx(np.sqrt(2))


@given(st.integers(0, 10 ** 6), st.integers(1, 4))
def test_standardize_properties(seed, d):
    rng = np.random.default_rng(seed)
    p = ProblemData(rng.normal(3, 5, (d, 20)), rng.normal(-2, 7, 20))
    ps, rec = standardize(p)
    assert np.allclose(ps.X.mean(axis=1), 0, atol=1e-14)
    assert np.allclose(np.linalg.norm(ps.X, axis=1), 1)
    assert abs(ps.Y.mean()) < 1e-14 and np.linalg.norm(ps.Y) == pytest.approx(1)
    assert np.allclose(rec.X_to_raw(ps.X), p.X, atol=1e-12 * (1 + np.abs(p.X).max()))
    assert np.allclose(rec.theta_to_raw(ps.Y), p.Y, atol=1e-12 * (1 + np.abs(p.Y).max()))
    again, _ = standardize(ps)
    assert np.allclose(again.X, ps.X, atol=1e-15) and np.allclose(again.Y, ps.Y, atol=1e-15)
    S = rng.standard_normal((5, d))
    assert np.allclose(rec.slopes_to_std(rec.slopes_to_raw(S)), S)
    assert np.all(rec.x_scale > 0) and rec.y_scale > 0
    assert StandardizationRecord.from_dict(rec.to_dict()).to_dict() == rec.to_dict()


def test_standardize_constant_row_warns():
    p = ProblemData(np.array([[1.0, 1.0, 1.0], [0.0, 1.0, 2.0]]), np.array([0.0, 1.0, 3.0]))
    with pytest.warns(RuntimeWarning):
        ps, rec = standardize(p)
    assert rec.x_scale[0] == 1.0 and np.all(ps.X[0] == 0.0)


def test_constraint_mapping():
    p = ProblemData(np.array([[0.0, 2.0, 4.0], [0.0, 1.0, 5.0]]), np.array([0.0, 1.0, 5.0]))
    _, rec = standardize(p)
    box = Box(np.zeros(2), np.ones(2))
    std = rec.constraint_to_std(box)
    assert np.allclose(std.upper, rec.x_scale / rec.y_scale)
    back = rec.constraint_to_raw(std)
    assert np.allclose(back.upper, 1.0) and np.allclose(back.lower, 0.0)
    assert rec.constraint_to_std(Monotone((0,), ())) == Monotone((0,), ())
    assert rec.constraint_to_std(Free()) == Free()
    with pytest.raises(ValueError):
        rec.constraint_to_std(LipschitzBall(2, 1.0))  # unequal row scales
    assert rec.constraint_to_raw(LipschitzBall(2, 1.0)) is None
    assert rec.constraint_to_raw(per_point_balls(2, [1.0, 1.0, 1.0])) is None
    eq = ProblemData(np.array([[0.0, 1.0, 2.0], [2.0, 1.0, 0.0]]), np.array([0.0, 1.0, 5.0]))
    _, rec2 = standardize(eq)
    ball = rec2.constraint_to_std(LipschitzBall(2, 1.5))
    assert rec2.constraint_to_raw(ball).radius == pytest.approx(1.5)


def _write(tmp_path, text, name="d.csv"):
    f = tmp_path / name
    f.write_text(text)
    return str(f)


def test_load_csv_fixture(tmp_path):
    path = _write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n7,8,9\n")
    p = load_csv(path, "y")
    assert np.array_equal(p.X, [[1, 4, 7], [2, 5, 8]]) and np.array_equal(p.Y, [3, 6, 9])
    p = load_csv(path, "y", ["b"])
    assert np.array_equal(p.X, [[2, 5, 8]])


def test_load_csv_transform_and_filter(tmp_path):
    path = _write(tmp_path, "educ,age,wage\n10,30,1\n12,40,2\n16,80,3\n8,50,4\n")
    p = load_csv(path, "wage", ["educ"], {"educ": "1.2^x"}, ["age < 70"])
    assert np.allclose(p.X[0], [1.2 ** 10, 1.2 ** 12, 1.2 ** 8])
    assert np.array_equal(p.Y, [1, 2, 4])
    assert np.allclose(parse_transform("log(x)")(np.array([np.e])), [1.0])
    assert np.allclose(parse_transform("x^2")(np.array([3.0])), [9.0])
    with pytest.raises(ValueError):
        parse_transform("sin(x)")


@pytest.mark.parametrize("text,match", [
    ("a,y\n1,2\n3,x\n", ":3: non-numeric"),
    ("a,y\n1,2\n3\n", ":3: expected 2 fields"),
    ("a,y\n1,2\n", "at least two"),
    ("", "empty"),
])
def test_load_csv_errors(tmp_path, text, match):
    with pytest.raises(ValueError, match=match):
        load_csv(_write(tmp_path, text), "y")


def test_load_csv_schema_errors(tmp_path):
    path = _write(tmp_path, "a,y\n1,2\n3,4\n")
    with pytest.raises(ValueError, match="missing column"):
        load_csv(path, "z")
    with pytest.raises(ValueError, match="bad row filter"):
        load_csv(path, "y", filters=["q > 1"])
    with pytest.raises(ValueError, match="unknown predictor"):
        load_csv(path, "y", transforms={"b": "x"})
