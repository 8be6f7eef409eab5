import numpy as np
import pytest

from vlaprune.gradcheck import (
    central_difference,
    finite_difference_gradients,
    max_relative_error,
)


def test_central_difference_exact_for_quadratic(rng):
    # central differences have no error on quadratics
    a = rng.normal(size=(3, 3))
    x = rng.normal(size=(3, 3))

    def f(v):
        return float((v * a * v).sum())

    g = central_difference(f, x)
    np.testing.assert_allclose(g, 2 * a * x, rtol=1e-8, atol=1e-9)


def test_central_difference_does_not_mutate(rng):
    x = rng.normal(size=(2, 2))
    before = x.copy()
    central_difference(lambda v: float(v.sum()), x)
    np.testing.assert_array_equal(x, before)


def test_finite_difference_gradients_multiple_inputs(rng):
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(3,))

    def f(x, y):
        return float((x @ y).sum())

    ga, gb = finite_difference_gradients(f, [a, b])
    np.testing.assert_allclose(ga, np.tile(b, (2, 1)), atol=1e-8)
    np.testing.assert_allclose(gb, a.sum(axis=0), atol=1e-8)


def test_max_relative_error_zero_for_equal(rng):
    x = rng.normal(size=(4, 4))
    assert max_relative_error(x, x.copy()) == 0.0


def test_max_relative_error_floor():
    # tiny absolute differences near zero stay small thanks to the floor
    a = np.array([1e-9])
    b = np.array([2e-9])
    assert max_relative_error(a, b) == pytest.approx(1e-9)


def test_max_relative_error_large_values():
    a = np.array([100.0])
    b = np.array([101.0])
    assert max_relative_error(a, b) == pytest.approx(1.0 / 101.0)


def test_max_relative_error_shape_mismatch():
    with pytest.raises(ValueError):
        max_relative_error(np.zeros(2), np.zeros(3))


def test_max_relative_error_empty():
    assert max_relative_error(np.zeros(0), np.zeros(0)) == 0.0
