import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedloge.errors import DimensionError, NumericError, ValidationError
from fedloge.numerics import RngStream, SgdConfig, finite_diff_grad, orthonormal_columns, sgd_step


def test_orthonormal_square():
    U = orthonormal_columns(4, 4, RngStream(3))
    assert np.max(np.abs(U.T @ U - np.eye(4))) <= 1e-10


def test_orthonormal_deterministic():
    a = orthonormal_columns(64, 10, RngStream(7))
    b = orthonormal_columns(64, 10, RngStream(7))
    assert a.tobytes() == b.tobytes()


def test_orthonormal_rejects_narrow():
    with pytest.raises(DimensionError):
        orthonormal_columns(3, 5, RngStream(0))


@settings(max_examples=40, deadline=None)
@given(C=st.integers(2, 12), extra=st.integers(0, 20), seed=st.integers(0, 2**32))
def test_orthonormal_property(C, extra, seed):
    U = orthonormal_columns(C + extra, C, RngStream(seed))
    assert np.max(np.abs(U.T @ U - np.eye(C))) <= 1e-10


def test_stream_labels_independent():
    a = RngStream(1, "x").normal(size=5)
    b = RngStream(1, "y").normal(size=5)
    assert not np.array_equal(a, b)
    assert np.array_equal(RngStream(1).child("x").normal(size=3), RngStream(1, "root/x").normal(size=3))


def test_stream_reproducible():
    v = RngStream(0, "root").normal(size=3)
    w = RngStream(0, "root").normal(size=3)
    assert np.array_equal(v, w)
    assert RngStream(0).child("a").permutation(5).tolist() == RngStream(0).child("a").permutation(5).tolist()


def test_seed_range():
    with pytest.raises(ValidationError):
        RngStream(-1)


def test_sgd_plain():
    p, _ = sgd_step([[1.0]], [[2.0]], SgdConfig(learning_rate=0.5), [[0.0]])
    assert p.tolist() == [[0.0]]


def test_sgd_zero_grad_fixed_point():
    p0 = np.arange(6.0).reshape(2, 3)
    p, v = sgd_step(p0, np.zeros_like(p0), SgdConfig(learning_rate=0.3, momentum=0.9), np.zeros_like(p0))
    assert np.array_equal(p, p0)


def test_sgd_momentum_two_steps():
    lr, m, g = 0.1, 0.9, np.array([[2.0, -1.0]])
    cfg = SgdConfig(learning_rate=lr, momentum=m)
    p, v = np.array([[1.0, 1.0]]), np.zeros((1, 2))
    p, v = sgd_step(p, g, cfg, v)
    p, v = sgd_step(p, g, cfg, v)
    # hand expansion: v1 = g, p1 = p0 - lr g; v2 = m g + g, p2 = p1 - lr (1 + m) g
    expected = np.array([[1.0, 1.0]]) - lr * g - lr * (1 + m) * g
    assert np.allclose(p, expected, atol=1e-15)
    assert np.allclose(v, (1 + m) * g)


def test_sgd_shape_mismatch():
    with pytest.raises(DimensionError):
        sgd_step(np.zeros((2, 2)), np.zeros((2, 3)), SgdConfig(), np.zeros((2, 2)))


def test_sgd_weight_decay():
    p, _ = sgd_step([[2.0]], [[0.0]], SgdConfig(learning_rate=0.5, weight_decay=0.1), [[0.0]])
    assert p[0, 0] == pytest.approx(2.0 - 0.5 * 0.2)


@pytest.mark.parametrize("kwargs", [dict(learning_rate=-1), dict(momentum=1.0), dict(steps=-1),
                                    dict(batch_size=0), dict(weight_decay=-0.1)])
def test_sgd_config_validation(kwargs):
    with pytest.raises(ValidationError):
        SgdConfig(**kwargs)


def test_fd_square():
    g = finite_diff_grad(lambda x: float(np.sum(x ** 2)), np.array([3.0]), h=1e-5)
    assert abs(g[0] - 6.0) <= 1e-6


def test_fd_constant():
    g = finite_diff_grad(lambda x: 4.2, np.ones((2, 3)))
    assert np.array_equal(g, np.zeros((2, 3)))


def test_fd_norm():
    g = finite_diff_grad(lambda x: float(np.linalg.norm(x)), np.array([3.0, 4.0]), h=1e-5)
    assert np.allclose(g, [0.6, 0.8], atol=1e-5)


def test_fd_nonfinite():
    with pytest.raises(NumericError), np.errstate(all="ignore"):
        finite_diff_grad(lambda x: np.log(x[0]), np.array([0.0]), h=1e-5)


def test_fd_bad_step():
    with pytest.raises(ValidationError):
        finite_diff_grad(lambda x: 0.0, np.ones(1), h=0.0)


@settings(max_examples=30, deadline=None)
@given(coef=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       x=st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_fd_polynomial(coef, x):
    a, b, c = coef
    x = np.array(x)
    f = lambda v: float(np.sum(a * v ** 3 + b * v ** 2 + c * v))
    analytic = 3 * a * x ** 2 + 2 * b * x + c
    g = finite_diff_grad(f, x, h=1e-5)
    assert np.all(np.abs(g - analytic) <= 1e-6 * np.maximum(1.0, np.abs(analytic)))
