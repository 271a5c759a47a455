import numpy as np
import pytest

from torusfold import critical as C
from torusfold.bumpkit import complete_flatten_params
from torusfold.errors import ConfigInvalid, PreconditionViolated
from torusfold.flatten import (KAPPA_INNER, _ball_samples, FlattenConfig, Flattening, FlattenedMap,
                               build_collapse, c1_c2_gap, c2_distance_F_Id,
                               collapse_sweep, flatness_check, nf_fold, nf_fold_demo,
                               volume_defect_bound)
from torusfold.torusmap import (BaseMap, LinearMap, base_point, canonical, centered,
                                image_point, torus_distance)

from conftest import base_map, collapse_map, flat_map


def _near_fp(n, l, count, seed):
    """Points of B(0~, 2l) x S^1 with the fibre coordinate spread over the circle."""
    rng = np.random.default_rng(seed)
    z = C.ball_lattice(n - 1, 2 * l, count, seed)
    y = np.empty((len(z), n))
    y[:, :-1] = z
    y[:, -1] = rng.random(len(z))
    return canonical(y)


def test_u_examples(hmap):
    flat, l = hmap.flat, hmap.params.l
    n = hmap.n
    assert flat.eval_u(np.zeros(n - 1)) == 0.5
    far = np.zeros((5, n - 1))
    far[:, 0] = np.linspace(2 * l, 0.49, 5)
    assert np.all(flat.eval_u(far) == 0.5)
    assert np.all(flat.grad_u(far) == 0.0)


def test_u_is_Phi_on_inner_ball(hmap):
    flat, l = hmap.flat, hmap.params.l
    z = C.ball_lattice(hmap.n - 1, l, 500)
    assert np.array_equal(flat.u_offset(z), C.Phi_minus_half(hmap.fmap, z))


def test_c2_distance(hmap):
    d = c2_distance_F_Id(hmap.flat, samples=4000)
    assert d.passed
    assert max(d.sup0, d.sup1, d.sup2) < 1e-2


def test_grad_u_matches_fd(hmap):
    # at the default l, |du| ~ 1e-13 sits at rounding level; a wider
    # transition makes u large enough to difference
    par = hmap.params
    cfg = FlattenConfig(par.eps, par.eps_prime, 0.9 * par.b, par.b, par.W)
    flat = Flattening(hmap.fmap, cfg)
    z = C.ball_lattice(hmap.n - 1, 1.9 * cfg.l, 300, 5)
    g = flat.grad_u(z)
    h = 1e-4
    fd = np.stack([(flat.u_offset(z + h * e) - flat.u_offset(z - h * e)) / (2 * h)
                   for e in np.eye(hmap.n - 1)], axis=1)
    assert np.max(np.abs(fd - g)) < 1e-4 * np.max(np.abs(g))


def test_halving_budget_shrinks_sup0():
    # at the default eps' the patch radius, not eps', limits W; start where
    # eps' binds
    fmap = base_map(2)
    par = fmap.params
    assert complete_flatten_params(par.replace(eps_prime=par.eps_prime / 2)).W == par.W
    sups, widths = [], []
    for k in (4, 8):
        q = complete_flatten_params(par.replace(eps_prime=par.eps_prime / k), fmap.psi)
        widths.append(q.W)
        sups.append(c2_distance_F_Id(Flattening(BaseMap(q, fmap.psi, fmap.phi)), 2000).sup0)
    assert widths[1] < widths[0]
    assert sups[0] >= 1.5 * sups[1]


def test_det_F_is_one(hmap):
    flat = hmap.flat
    y = _near_fp(hmap.n, hmap.params.l, 10**4, 1)
    d = flat.det_F(y)
    assert np.max(np.abs(d - 1)) < 1e-12
    lu = np.linalg.det(flat.jac_F(y[:2000]))
    assert np.max(np.abs(lu - 1)) < 1e-12
    assert volume_defect_bound(flat) < 1e-12


def test_jac_F_matches_fd(hmap):
    flat, n = hmap.flat, hmap.n
    y = _near_fp(n, hmap.params.l, 500, 2)
    y[:, -1] = 0.5 + 0.4 * (y[:, -1] - 0.5)
    j = flat.jac_F(y)
    h = 1e-6
    fd = np.empty_like(j)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        fd[:, :, k] = centered(flat.eval_F(y + e) - flat.eval_F(y - e)) / (2 * h)
    assert np.max(np.abs(fd - j)) < 1e-6


def test_F_identity_off_support(hmap):
    flat, n, l = hmap.flat, hmap.n, hmap.params.l
    rng = np.random.default_rng(3)
    y = rng.random((5000, n))
    far = np.linalg.norm(centered(y[:, :-1]), axis=1) >= 2 * l
    assert np.array_equal(flat.eval_F(y[far]), canonical(y[far]))
    # the fibre cutoff leaves a neighbourhood of {y_n = 0} untouched
    y[:, -1] = rng.uniform(-KAPPA_INNER, KAPPA_INNER, 5000) * 0.1
    assert np.array_equal(flat.eval_F(y), canonical(y))


def test_F_inverse(hmap):
    flat = hmap.flat
    y = _near_fp(hmap.n, hmap.params.l, 2000, 4)
    back = flat.eval_F(flat.inverse_F(y))
    assert np.max(np.abs(centered(back - y))) < 1e-12
    # explicit inverse on the flat part of the cutoff
    y[:, -1] = 0.5 + 0.1 * (y[:, -1] - 0.5)
    x = y.copy()
    x[:, -1] = y[:, -1] + flat.u_offset(y[:, :-1])
    assert np.max(np.abs(centered(flat.eval_F(x) - y))) < 1e-12


def test_flatness_of_critical_image(hmap):
    rep = flatness_check(hmap, samples=2000)
    assert rep.passed
    assert rep.branch_max_dev < 1e-9
    # the second sheet of f(S_f) near f(p) stays off {x_n = 1/2}
    assert rep.other_points == 0 or rep.other_min_dev > 1e-6


def test_H_examples(hmap):
    n = hmap.n
    p = base_point(n)
    assert np.allclose(hmap.eval(p), image_point(n), atol=1e-15)
    assert np.allclose(hmap.eval(p), hmap.fmap.eval(p), atol=1e-15)


def test_H_shares_critical_set(hmap):
    cs = C.sample_critical_set(hmap.fmap, 20, 16)
    assert np.max(np.abs(hmap.det(cs.points))) < 1e-9
    rng = np.random.default_rng(5)
    x = rng.random((2000, hmap.n))
    fd, hd = hmap.fmap.det(x), hmap.det(x)
    assert np.array_equal(np.sign(fd), np.sign(hd))


def test_H_matches_A_away_from_modifications(hmap):
    n, l = hmap.n, hmap.params.l
    rng = np.random.default_rng(6)
    x = rng.random((20000, n))
    y = LinearMap(n).eval(x)
    clean = ~hmap.fmap.in_support(x) & (np.linalg.norm(centered(y[:, :-1]), axis=1) >= 2 * l)
    assert np.array_equal(hmap.eval(x[clean]), y[clean])


def test_H_jacobian_matches_fd(hmap):
    n = hmap.n
    rng = np.random.default_rng(7)
    par = hmap.params
    x = canonical(base_point(n) + rng.uniform(-1, 1, (2000, n)) * par.r / np.sqrt(n))
    x[:1000, -1] = 0.25 + par.delta * rng.uniform(-0.3, 0.8, 1000)
    j = hmap.jac(x)
    h = 1e-7
    fd = np.empty_like(j)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        fd[:, :, k] = centered(hmap.eval(x + e) - hmap.eval(x - e)) / (2 * h)
    err = np.linalg.norm(fd - j, axis=(1, 2)) / np.linalg.norm(j, axis=(1, 2))
    assert np.max(err) < 1e-5


def test_H_ball_disjoint_from_image(hmap):
    n, r = hmap.n, hmap.params.r
    rng = np.random.default_rng(8)
    v = rng.standard_normal((20000, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    x = canonical(base_point(n) + v * r * rng.random(20000)[:, None] ** (1 / n))
    assert np.all(torus_distance(hmap.eval(x), base_point(n)) > r)


def test_flatten_config_validation():
    par = base_map(2).params
    with pytest.raises(ConfigInvalid):
        FlattenConfig.from_params(par.replace(eps_prime=par.eps)).validate()
    with pytest.raises(ConfigInvalid):
        FlattenConfig.from_params(par.replace(l=par.b)).validate()
    with pytest.raises(ConfigInvalid):
        FlattenConfig.from_params(par.replace(W=par.b)).validate()
    with pytest.raises(ConfigInvalid):
        FlattenedMap(base_map(2), FlattenConfig.from_params(par.replace(b=0.3)))


# ---------------------------------------------------------------------------
# collapse


def test_collapse_rejects_large_rho():
    H = flat_map(2)
    with pytest.raises(ConfigInvalid):
        build_collapse(H, H.params.l)
    with pytest.raises(ConfigInvalid):
        build_collapse(H, 0.0)


def test_collapse_examples(n):
    g = collapse_map(n)
    H, rho = g.H, g.rho
    p = base_point(n)
    rng = np.random.default_rng(9)
    v = rng.standard_normal((5000, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    inner = canonical(p + v * (rho / 2) * rng.random(5000)[:, None] ** (1 / n))
    assert np.all(g.eval(inner)[:, -1] == 0.5)
    assert np.all(g.eval(g.eval(inner))[:, -1] == 0.0)
    outer = canonical(p + v * rho * (1 + rng.random(5000))[:, None])
    assert np.array_equal(g.eval(outer), H.eval(outer))
    x = rng.random((5000, n))
    far = torus_distance(x, p) > rho
    assert np.array_equal(g.eval(x[far]), H.eval(x[far]))


def test_collapse_jacobian_matches_fd(n):
    g = collapse_map(n)
    rng = np.random.default_rng(10)
    p = base_point(n)
    x = canonical(p + rng.uniform(-1, 1, (1000, n)) * g.rho / np.sqrt(n))
    j = g.jac(x)
    h = 1e-4 * g.rho
    fd = np.empty_like(j)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        fd[:, :, k] = centered(g.eval(x + e) - g.eval(x - e)) / (2 * h)
    assert np.max(np.abs(fd - j)) < 1e-4 * np.max(np.abs(j))


def test_gap0_bounded_by_H_deviation(n):
    g = collapse_map(n)
    row = c1_c2_gap(g, samples=2000)
    pts = _ball_samples(g.p, g.rho, 2000, 0)
    assert row.gap0 <= np.max(np.abs(centered(g.H.eval(pts)[:, -1] - 0.5))) + 1e-15


def test_collapse_sweep_gaps(n):
    rows = collapse_sweep(flat_map(n), halvings=4, samples=2000)
    g0 = [r.gap0 for r in rows]
    g1 = [r.gap1 for r in rows]
    g2 = [r.gap2 for r in rows]
    assert all(b < a for a, b in zip(g0, g0[1:]))
    assert all(b < a for a, b in zip(g1, g1[1:]))
    assert min(g2) > 1.0


# ---------------------------------------------------------------------------
# normal form


def test_nf_fold_demo():
    eps = 1e-2
    r = eps / 8
    rep = nf_fold_demo(r, eps, 3)
    assert rep.passed
    assert rep.sup_c0 < r * r and rep.sup_dn < 7 * r
    assert rep.collapse_exact and rep.agrees_outside
    assert np.array_equal(nf_fold(np.zeros(3)), np.zeros(3))


def test_nf_fold_demo_precondition():
    with pytest.raises(PreconditionViolated):
        nf_fold_demo(0.01, 0.05, 2)
