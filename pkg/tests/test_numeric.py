import numpy as np
import pytest

from distilkit import numeric
from distilkit.errors import NumericError, ShapeError

from _oracles import naive_matmul


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(numeric.matmul(np.eye(2), a), a)


def test_matmul_dot_product():
    out = numeric.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
    assert out.shape == (1, 1)
    assert out[0, 0] == 11.0


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 3))
    np.testing.assert_allclose(numeric.matmul(a, b), naive_matmul(a, b), atol=1e-12)


def test_matmul_random_shapes_vs_oracle():
    rng = np.random.default_rng(11)
    for _ in range(10):
        m, k, n = rng.integers(1, 33, size=3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        np.testing.assert_allclose(numeric.matmul(a, b), naive_matmul(a, b), atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as e:
        numeric.matmul(np.zeros((2, 3)), np.zeros((4, 5)))
    assert "(2, 3)" in str(e.value) and "(4, 5)" in str(e.value)


def test_sigmoid_values():
    assert numeric.sigmoid(np.array(0.0)) == 0.5
    assert numeric.sigmoid(np.array(1.0)) == pytest.approx(0.73105857863000488, abs=1e-12)
    low = numeric.sigmoid(np.array(-50.0))
    assert 0 < low < 1e-20


def test_sigmoid_extreme_inputs_never_nan():
    out = numeric.sigmoid(np.array([-1e6, -750.0, 750.0, 1e6]))
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[-1] == 1.0


def test_sigmoid_symmetry():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(100) * 10
    np.testing.assert_allclose(numeric.sigmoid(x) + numeric.sigmoid(-x), 1.0, atol=1e-12)


def test_tanh_values():
    assert numeric.tanh(np.array(0.0)) == 0.0
    assert numeric.tanh(np.array(0.5)) == pytest.approx(0.46211715726000976, abs=1e-12)


def test_tanh_odd_symmetry():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(50) * 5
    np.testing.assert_allclose(numeric.tanh(x), -numeric.tanh(-x), atol=1e-15)


def test_softmax_uniform():
    np.testing.assert_allclose(numeric.softmax(np.zeros(3)), np.full(3, 1 / 3), atol=1e-15)


def test_softmax_closed_form_and_shift_invariance():
    for c in (-100.0, 0.0, 17.5, 100.0):
        out = numeric.softmax(np.array([c, c + np.log(3.0)]))
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-12)


def test_softmax_properties_random():
    rng = np.random.default_rng(5)
    for _ in range(50):
        x = rng.standard_normal(rng.integers(1, 20)) * rng.uniform(0.1, 50)
        out = numeric.softmax(x)
        assert abs(out.sum() - 1.0) < 1e-12
        assert np.all(out > 0) and np.all(out <= 1)
        assert np.argmax(out) == np.argmax(x)
        c = rng.uniform(-100, 100)
        np.testing.assert_allclose(numeric.softmax(x + c), out, atol=1e-12)


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        numeric.softmax(np.array([0.0, np.nan]))
    with pytest.raises(NumericError):
        numeric.softmax(np.array([np.inf, 0.0]))


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((4, 9)) * 10
    np.testing.assert_allclose(
        numeric.log_softmax(x, axis=1), np.log(numeric.softmax(x, axis=1)), atol=1e-12)


def test_elementwise_mul():
    a = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(numeric.elementwise_mul(a, np.array([4.0, 5.0, 6.0])),
                                  [4.0, 10.0, 18.0])
    np.testing.assert_array_equal(numeric.elementwise_mul(a, np.ones(3)), a)
    np.testing.assert_array_equal(numeric.elementwise_mul(a, np.zeros(3)), np.zeros(3))


def test_elementwise_mul_shape_error():
    with pytest.raises(ShapeError):
        numeric.elementwise_mul(np.zeros(3), np.zeros(4))
