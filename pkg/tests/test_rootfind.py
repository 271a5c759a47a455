import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torusfold.errors import NoRoot
from torusfold.rootfind import bracketed_newton


def test_scalar_cube_root():
    x = bracketed_newton(lambda x: x**3 - 2.0, lambda x: 3 * x**2, 0.0, 2.0)
    assert isinstance(x, float)
    assert x == pytest.approx(2.0 ** (1 / 3), rel=1e-15)


def test_vectorised_targets():
    c = np.linspace(0.1, 0.9, 9)
    x = bracketed_newton(lambda x, c: np.sin(x) - c, lambda x, c: np.cos(x),
                         np.zeros(9), np.full(9, 1.5), args=(c,))
    np.testing.assert_allclose(np.sin(x), c, rtol=0, atol=1e-15)


def test_endpoint_root_returned_exactly():
    assert bracketed_newton(lambda x: x - 1.0, lambda x: np.ones_like(x), 1.0, 3.0) == 1.0
    assert bracketed_newton(lambda x: x - 3.0, lambda x: np.ones_like(x), 1.0, 3.0) == 3.0


def test_decreasing_function_oriented():
    x = bracketed_newton(lambda x: 1.0 - x * x, lambda x: -2 * x, 0.0, 4.0)
    assert x == pytest.approx(1.0, abs=1e-14)


def test_no_sign_change_raises():
    with pytest.raises(NoRoot):
        bracketed_newton(lambda x: x * x + 1, lambda x: 2 * x, -1.0, 1.0)


def test_seed_inside_bracket_skips_bisection():
    calls = []

    def fun(x):
        calls.append(1)
        return x - 0.3

    bracketed_newton(fun, lambda x: np.ones_like(x), 0.0, 1.0, x0=0.3)
    assert len(calls) <= 4


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 0.99))
def test_root_stays_in_bracket(c):
    # Newton from the midpoint of a flat-ended function would overshoot
    x = bracketed_newton(lambda x: np.tanh(40 * (x - c)), lambda x: 40 / np.cosh(40 * (x - c)) ** 2,
                         0.0, 1.0)
    assert 0.0 <= x <= 1.0
    assert abs(x - c) < 1e-12


def test_args_follow_the_active_set():
    # elements converge at different rates; targets must stay aligned
    c = np.array([0.0, 0.5, 1e-9, 0.999, 0.25])
    k = np.array([1.0, 40.0, 3.0, 80.0, 7.0])
    x = bracketed_newton(lambda x, c, k: np.tanh(k * (x - c)),
                         lambda x, c, k: k / np.cosh(k * (x - c)) ** 2,
                         np.zeros(5), np.ones(5), args=(c, k))
    np.testing.assert_allclose(x, c, rtol=0, atol=1e-12)
