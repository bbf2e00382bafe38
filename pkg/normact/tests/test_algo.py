import math

import numpy
import pytest

from normact import algo


@pytest.mark.parametrize(
    ("fn", "lo", "hi", "expected"),
    [
        (lambda x: x**4, -1.0, 1.0, 0.4),
        (numpy.exp, 0.0, 1.0, math.e - 1.0),
        (numpy.abs, -1.0, 1.0, 1.0),
        (lambda x: numpy.maximum(x, 0.0) ** 2, -3.0, 3.0, 9.0),
    ],
)
def test_gauss_legendre(fn, lo, hi, expected):
    x, w = algo.gauss_legendre(64, lo, hi)
    assert numpy.sum(w * fn(x)) == pytest.approx(expected, rel=1e-13)


def test_gauss_legendre_even_panels():
    x, w = algo.gauss_legendre(40, -1.0, 1.0, order=32)
    assert x.size == 64
    assert w.sum() == pytest.approx(2.0)
    assert numpy.all((x > -1.0) & (x < 1.0))


def test_central_difference_restores_array():
    array = numpy.array([1.0, -2.0, 3.0])
    original = array.copy()
    grad = algo.central_difference(lambda: float(numpy.sum(array**2)), array, 1e-4)
    numpy.testing.assert_allclose(grad, 2 * original, rtol=1e-8)
    numpy.testing.assert_array_equal(array, original)


def test_central_difference_2d():
    array = numpy.arange(6.0).reshape(2, 3)
    grad = algo.central_difference(lambda: float(numpy.sum(array * 3.0)), array, 1e-3)
    assert grad.shape == (2, 3)
    numpy.testing.assert_allclose(grad, 3.0)


@pytest.mark.parametrize(
    ("analytic", "numeric", "expected"),
    [(1.0, 1.0, 0.0), (1.0, 0.5, 0.5), (0.0, 0.0, 0.0), (-2.0, 2.0, 2.0)],
)
def test_relative_error(analytic, numeric, expected):
    assert algo.relative_error(analytic, numeric, atol=0.0 if expected else 1e-8) == pytest.approx(expected)


def test_check_gradient_survives_a_kink():
    array = numpy.array([1e-6, 0.5])

    def f():
        return float(numpy.sum(numpy.abs(array)))

    errors = algo.check_gradient(f, array, numpy.array([1.0, 1.0]))
    assert errors.shape == (2,)
    assert errors.max() < 1e-6


def test_best_numeric_gradient_picks_the_step_per_entry():
    array = numpy.array([5e-5, -2.0])

    def f():
        return float(numpy.maximum(array[0], 0.0) + array[1] ** 3)

    numeric, errors = algo.best_numeric_gradient(f, array, numpy.array([1.0, 12.0]), steps=(1e-4, 1e-6))
    assert numeric[0] == pytest.approx(1.0, rel=1e-8)
    assert numeric[1] == pytest.approx(12.0, rel=1e-8)
    assert errors.max() < 1e-8
