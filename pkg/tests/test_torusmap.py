import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from torusfold.torusmap import (LinearMap, TorusPoint, base_point, canonical, centered,
                                det_jac_f, eval_A, eval_f, image_point, jac_f,
                                local_lift, radial_arg, torus_distance)

from conftest import base_map, params_for

_pts = arrays(np.float64, 4, elements=st.floats(-3, 3, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(_pts)
def test_canonical_idempotent(x):
    c = canonical(x)
    assert np.all((c >= 0) & (c < 1))
    assert np.array_equal(canonical(c), c)
    assert torus_distance(x, x) == 0.0


@settings(max_examples=100, deadline=None)
@given(_pts, _pts)
def test_local_lift_is_nearest(x, anchor):
    y = local_lift(x, anchor)
    assert np.allclose(canonical(y), canonical(x), atol=1e-12) or \
        np.allclose(centered(y - x), 0, atol=1e-12)
    assert np.linalg.norm(y - anchor) == pytest.approx(float(torus_distance(x, anchor)), abs=1e-12)
    assert np.all(np.abs(y - anchor) <= 0.5)


def test_torus_point_distance():
    a, b = TorusPoint((0.95, 0.1)), TorusPoint((0.05, 0.1))
    assert a.distance(b) == pytest.approx(0.1)
    assert TorusPoint((1.25, -0.5)).coords == (0.25, 0.5)


@pytest.mark.parametrize("n", [2, 3, 7])
def test_A_on_base_point(n):
    p = base_point(n)
    assert np.array_equal(eval_A(p), image_point(n))
    assert np.array_equal(eval_A(eval_A(p)), np.zeros(n))
    assert np.array_equal(eval_A(np.zeros(n)), np.zeros(n))


def test_radial_arg_examples(n):
    par = params_for(n)
    p = base_point(n)
    assert radial_arg(p, par) == pytest.approx(1 / 16, abs=1e-15)
    q = p.copy()
    q[-1] += par.delta / 8
    assert radial_arg(q, par) == pytest.approx(1 / 16, abs=1e-15)
    h = 0.013
    q = p.copy()
    q[0] += h
    assert radial_arg(q, par) == pytest.approx((0.25 + h) ** 2, rel=1e-14)


def test_f_fixes_orbit_of_p(fmap):
    n = fmap.n
    p = base_point(n)
    fp = fmap.eval(p)
    assert np.allclose(fp, image_point(n), atol=1e-15)
    assert np.allclose(centered(fmap.eval(fp)), 0, atol=1e-15)


def _random_points(rng, n, count, center, radius):
    v = rng.standard_normal((count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return canonical(center + v * radius * rng.random(count)[:, None] ** (1 / n))


def test_f_equals_A_off_support(fmap):
    # the perturbation lives on the shell |x~|^2 ~ 1/16 times the phi strip,
    # which reaches outside B(p, r); off that set f is exactly A
    n = fmap.n
    rng = np.random.default_rng(1)
    x = rng.random((20000, n))
    x[:5000, -1] = 0.25 + fmap.params.delta * rng.uniform(-0.3, 0.8, 5000)
    diff = np.any(fmap.eval(x) != LinearMap(n).eval(x), axis=1)
    assert diff.any()
    assert np.all(fmap.in_support(x[diff]))
    off = ~fmap.in_support(x)
    assert np.array_equal(fmap.eval(x[off]), LinearMap(n).eval(x[off]))
    # the hyperplane {x_n = 0} stays clear of the support
    x[:, -1] = 0.0
    assert np.array_equal(fmap.eval(x), LinearMap(n).eval(x))


def _support_samples(fmap, count, seed):
    """Points where the perturbation is active, plus a uniform share."""
    par = fmap.params
    n = fmap.n
    rng = np.random.default_rng(seed)
    x = _random_points(rng, n, count, base_point(n), par.r)
    x[: count // 2, -1] = 0.25 + par.delta * rng.uniform(-0.3, 0.8, count // 2)
    return x


def test_jacobian_structure(fmap):
    x = _support_samples(fmap, 2000, 2)
    j = fmap.jac(x)
    n = fmap.n
    d = np.diag(np.array([8.0] + [2.0] * (n - 2) + [0.0]))
    top = j[:, :-1, :].copy()
    assert np.array_equal(top, np.broadcast_to(d[:-1], top.shape))
    xt = centered(x[:, :-1])
    s = np.sum(xt * xt, axis=1)
    ph, ph1, _ = fmap.phi.eval(x[:, -1])
    ps, ps1, _ = fmap.psi.eval(s)
    assert np.allclose(j[:, -1, :-1], -2 * xt * (ph * ps1)[:, None], rtol=0, atol=1e-15)
    assert np.allclose(j[:, -1, -1], 2 - ph1 * ps, rtol=0, atol=1e-15)


def test_jacobian_at_p_has_zero_last_row(fmap):
    j = fmap.jac(base_point(fmap.n))
    assert np.max(np.abs(j[-1])) < 1e-12
    assert np.array_equal(fmap.jac(np.zeros(fmap.n)), np.diag(LinearMap(fmap.n).diag))


def test_finite_difference_jacobian(fmap):
    n = fmap.n
    x = _support_samples(fmap, 10**4, 3)
    j = fmap.jac(x)
    fd = np.empty_like(j)
    for k in range(n):
        h = np.zeros(n)
        h[k] = 1e-7
        fd[:, :, k] = centered(fmap.eval(x + h) - fmap.eval(x - h)) / 2e-7
    err = np.linalg.norm(fd - j, axis=(1, 2)) / np.linalg.norm(j, axis=(1, 2))
    assert np.max(err) < 1e-5


def test_closed_form_determinant_matches_lu(fmap):
    x = _support_samples(fmap, 10**4, 4)
    closed = fmap.det(x)
    lu = np.linalg.det(fmap.jac(x))
    scale = 8.0 * 2.0 ** (fmap.n - 2) * 2.0
    assert np.max(np.abs(closed - lu)) / scale < 1e-9
    nz = np.abs(lu) > 1e-3 * scale
    assert np.max(np.abs(closed[nz] - lu[nz]) / np.abs(lu[nz])) < 1e-9


def test_determinant_examples(fmap):
    n, d = fmap.n, fmap.params.delta
    p = base_point(n)
    assert abs(fmap.det(p)) < 1e-12
    q2 = p.copy()
    q2[-1] += d / 8
    assert fmap.det(q2) == pytest.approx(-(2.0 ** (n + 2)), rel=1e-10)
    assert np.linalg.det(fmap.jac(q2)) == pytest.approx(-(2.0 ** (n + 2)), rel=1e-10)


def test_determinant_changes_sign_along_last_axis(fmap):
    p = base_point(fmap.n)
    d = fmap.params.delta
    t = np.linspace(-0.2 * d, 0.2 * d, 401)
    x = np.tile(p, (len(t), 1))
    x[:, -1] += t
    det = fmap.det(x)
    assert det[0] > 0 and det[200 + 40] < 0


def test_functional_wrappers_agree(fmap):
    par = fmap.params
    x = _support_samples(fmap, 100, 5)
    assert np.array_equal(eval_f(x, par), fmap.eval(x))
    assert np.array_equal(jac_f(x, par), fmap.jac(x))
    assert np.array_equal(det_jac_f(x, par), fmap.det(x))


def test_dimension_cap():
    with pytest.raises(ValueError):
        LinearMap(65)
    with pytest.raises(ValueError):
        LinearMap(3).eval(np.zeros(4))


def test_base_map_cache_is_shared():
    assert base_map(2) is base_map(2)
