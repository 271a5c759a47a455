"""The flattening diffeomorphism F, the map H = F o f, the collapse map g^
and the R^n fold normal-form demo.

u(x~) = omega(|x~|)(Phi(x~) - 1/2) + 1/2 is C^2-close to 1/2. F shifts the
fibre coordinate by 1/2 - u, which sends f(S_f) near f(p) into {x_n = 1/2}.
The shift is additionally cut off in x_n by kappa(x_n - 1/2), so F is the
identity near the invariant hyperplane {x_n = 0}.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import critical
from .bumpkit import (MapParams, SmoothProfile, _plateau, build_chi, build_mu,
                      build_omega, sup_abs_derivative)
from .errors import ConfigInvalid, PreconditionViolated
from .torusmap import BaseMap, TorusMap, base_point, canonical, centered, torus_distance

KAPPA_INNER = 1.0 / 8.0
KAPPA_OUTER = 7.0 / 16.0
FD_STEP = 1e-4
VOLUME_TOL = 1e-12


def build_kappa() -> SmoothProfile:
    """Fibre cutoff: 1 for |t| <= 1/8, 0 for |t| >= 7/16."""
    return _plateau("kappa", KAPPA_INNER, KAPPA_OUTER, False, {})


@dataclass(frozen=True)
class FlattenConfig:
    eps: float
    eps_prime: float
    l: float
    b: float
    W: float

    @classmethod
    def from_params(cls, p: MapParams) -> "FlattenConfig":
        return cls(p.eps, p.eps_prime, p.l, p.b, p.W)

    def validate(self):
        if not 0 < self.eps_prime < self.eps / 50:
            raise ConfigInvalid(f"need 0 < eps' < eps/50, got {self.eps_prime}, {self.eps}")
        if not 0 < self.l < self.b < 0.25:
            raise ConfigInvalid(f"need 0 < l < b < 1/4, got l={self.l}, b={self.b}")
        if not 2 * self.b < self.W:
            raise ConfigInvalid(f"closed ball of radius 2b={2 * self.b} is not inside W={self.W}")
        return self


class Flattening:
    """u and F for a base map f."""

    def __init__(self, fmap: BaseMap, cfg: FlattenConfig | None = None):
        self.fmap = fmap
        self.n = fmap.n
        self.cfg = (cfg or FlattenConfig.from_params(fmap.params)).validate()
        self.omega = build_omega(self.cfg.l)
        self.kappa = build_kappa()

    # -- u -------------------------------------------------------------------

    def _active(self, z):
        z = centered(np.atleast_2d(np.asarray(z, dtype=float)))
        rad = np.linalg.norm(z, axis=1)
        return z, rad, rad < 2 * self.cfg.l

    def u_offset(self, xt):
        """u(x~) - 1/2, exactly 0 outside B(0~, 2l)."""
        xt = np.asarray(xt, dtype=float)
        z, rad, act = self._active(xt)
        out = np.zeros(len(z))
        if act.any():
            out[act] = self.omega.value(rad[act]) * critical.Phi_minus_half(self.fmap, z[act])
        return out.reshape(xt.shape[:-1]) if xt.ndim > 1 else float(out[0])

    def eval_u(self, xt):
        off = self.u_offset(xt)
        return 0.5 + off

    def grad_u(self, xt):
        xt = np.asarray(xt, dtype=float)
        z, rad, act = self._active(xt)
        out = np.zeros_like(z)
        if act.any():
            za, ra = z[act], rad[act]
            val, grad, _ = critical.Phi_derivatives(self.fmap, za)
            w, w1, _ = self.omega.eval(ra)
            unit = np.divide(za, ra[:, None], out=np.zeros_like(za), where=ra[:, None] > 0)
            out[act] = (w1 * val)[:, None] * unit + w[:, None] * grad
        return out.reshape(xt.shape) if xt.ndim > 1 else out[0]

    def hess_u(self, xt, h: float = FD_STEP):
        """Central differences of the analytic gradient."""
        xt = np.atleast_2d(np.asarray(xt, dtype=float))
        d = xt.shape[1]
        hs = np.empty((len(xt), d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            hs[:, :, j] = (self.grad_u(xt + e) - self.grad_u(xt - e)) / (2 * h)
        return 0.5 * (hs + hs.transpose(0, 2, 1))

    # -- F -------------------------------------------------------------------

    def _shift(self, y):
        """kappa(y_n - 1/2), kappa'(y_n - 1/2), u - 1/2."""
        t = canonical(y[:, -1]) - 0.5
        k, k1, _ = self.kappa.eval(t)
        off = np.zeros(len(y))
        live = (k != 0) | (k1 != 0)
        if live.any():
            off[live] = self.u_offset(y[live, :-1])
        return k, k1, off

    def eval_F(self, y):
        y = np.asarray(y, dtype=float)
        yb = np.atleast_2d(y).copy()
        k, _, off = self._shift(yb)
        yb[:, -1] = yb[:, -1] - k * off
        out = canonical(yb)
        return out if y.ndim > 1 else out[0]

    def jac_F(self, y):
        y = np.asarray(y, dtype=float)
        yb = np.atleast_2d(y)
        k, k1, off = self._shift(yb)
        j = np.broadcast_to(np.eye(self.n), (len(yb), self.n, self.n)).copy()
        live = k != 0
        if live.any():
            gu = self.grad_u(yb[live, :-1]).reshape(int(live.sum()), -1)
            j[live, -1, :-1] = -k[live, None] * gu
        j[:, -1, -1] = 1.0 - k1 * off
        return j if y.ndim > 1 else j[0]

    def det_F(self, y):
        """Lower-triangular Jacobian: det = 1 - kappa' (u - 1/2)."""
        y = np.asarray(y, dtype=float)
        yb = np.atleast_2d(y)
        _, k1, off = self._shift(yb)
        d = 1.0 - k1 * off
        return d if y.ndim > 1 else float(d[0])

    def inverse_F(self, y, iters: int = 4):
        """Fixed-point solve of x_n - kappa(x_n - 1/2)(u - 1/2) = y_n."""
        y = np.asarray(y, dtype=float)
        yb = np.atleast_2d(y)
        off = self.u_offset(yb[:, :-1]) if len(yb) else np.zeros(0)
        x = yb.copy()
        for _ in range(iters):
            k = self.kappa.value(canonical(x[:, -1]) - 0.5)
            x[:, -1] = yb[:, -1] + k * off
        out = canonical(x)
        return out if y.ndim > 1 else out[0]


def volume_defect_bound(flat: Flattening, samples: int = 4000, seed: int = 0) -> float:
    """sup|kappa'| * sampled sup|u - 1/2|: bounds |det DF - 1| everywhere."""
    z = critical.ball_lattice(flat.n - 1, 2 * flat.cfg.l, samples, seed)
    return sup_abs_derivative(flat.kappa, 1) * float(np.max(np.abs(flat.u_offset(z))))


class FlattenedMap(TorusMap):
    """H = F o f."""

    name = "H"

    def __init__(self, fmap: BaseMap, cfg: FlattenConfig | None = None):
        super().__init__(fmap.n)
        self.fmap = fmap
        self.params = fmap.params
        self.flat = Flattening(fmap, cfg)

    def _eval(self, x):
        return self.flat.eval_F(canonical(self.fmap._eval(x)))

    def _jac(self, x):
        y = canonical(self.fmap._eval(x))
        return self.flat.jac_F(y) @ self.fmap._jac(x)

    def det(self, x):
        xb = np.atleast_2d(np.asarray(x, dtype=float))
        y = canonical(self.fmap._eval(xb))
        d = self.flat.det_F(y) * self.fmap.det(xb)
        return d if np.ndim(x) > 1 else float(d[0])


@dataclass(frozen=True)
class C2Distance:
    sup0: float
    sup1: float
    sup2: float
    eps: float

    @property
    def passed(self) -> bool:
        return max(self.sup0, self.sup1, self.sup2) < self.eps

    def as_dict(self):
        return asdict(self) | {"passed": self.passed}


def c2_distance_F_Id(flat: Flattening, samples: int = 4000, rng_seed: int = 0) -> C2Distance:
    """Sampled sup over B(0~, 2l) of |u - 1/2|, |du|, |d^2 u| (u is 1/2 elsewhere)."""
    z = critical.ball_lattice(flat.n - 1, 2 * flat.cfg.l, samples, rng_seed)
    z = np.concatenate([np.zeros((1, flat.n - 1)), z])
    s0 = float(np.max(np.abs(flat.u_offset(z))))
    s1 = float(np.max(np.abs(flat.grad_u(z))))
    s2 = float(np.max(np.abs(flat.hess_u(z))))
    return C2Distance(s0, s1, s2, flat.cfg.eps)


# ---------------------------------------------------------------------------
# collapse


@dataclass(frozen=True)
class CollapseConfig:
    rho: float
    chi: SmoothProfile


class CollapseMap(TorusMap):
    """g^: equal to H off B(p, rho); squeezes H_n toward 1/2 inside, exactly
    1/2 on B(p, rho/2)."""

    name = "g"

    def __init__(self, H: FlattenedMap, cfg: CollapseConfig):
        super().__init__(H.n)
        self.H = H
        self.cfg = cfg
        self.p = base_point(H.n)

    @property
    def rho(self) -> float:
        return self.cfg.rho

    def _weights(self, x):
        d = torus_distance(x, self.p)
        c, c1, c2 = self.cfg.chi.eval(d)
        return d, c, c1, c2

    def _eval(self, x):
        y = self.H._eval(x)
        _, c, _, _ = self._weights(x)
        inside = c > 0
        if inside.any():
            off = centered(y[inside, -1] - 0.5)
            y[inside, -1] = 0.5 + off * (1.0 - c[inside])
        return y

    def _jac(self, x):
        j = self.H._jac(x)
        y = self.H._eval(x)
        d, c, c1, _ = self._weights(x)
        inside = c > 0
        if inside.any():
            off = centered(y[inside, -1] - 0.5)
            dx = centered(x[inside] - self.p)
            grad_d = dx / d[inside, None]
            j[inside, -1, :] = ((1.0 - c[inside])[:, None] * j[inside, -1, :]
                                - (off * c1[inside])[:, None] * grad_d)
        return j


def build_collapse(H: FlattenedMap, rho: float | None = None) -> CollapseMap:
    rho = H.params.rho if rho is None else rho
    if not 0 < rho < H.params.l:
        raise ConfigInvalid(f"need 0 < rho < l = {H.params.l}, got {rho}")
    return CollapseMap(H, CollapseConfig(rho, build_chi(rho)))


def _ball_samples(center, radius, count, seed):
    n = len(center)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    pts = v * radius * rng.random(count)[:, None] ** (1.0 / n)
    # the fold direction is e_n, so sample that axis densely
    axis = np.zeros((64, n))
    axis[:, -1] = np.linspace(-radius, radius, 66)[1:-1]
    return canonical(center + np.concatenate([pts, axis]))


@dataclass(frozen=True)
class GapRow:
    rho: float
    gap0: float
    gap1: float
    gap2: float


def c1_c2_gap(g: CollapseMap, samples: int = 4000, rng_seed: int = 0) -> GapRow:
    """Sampled C^0, C^1 and C^2 discrepancies between g^ and H on B(p, rho).

    Only the last row differs. C^1 uses central differences of g^_n against
    the analytic row of H; C^2 uses central differences of the analytic
    row difference. Steps scale with rho so they resolve the cutoff.
    """
    H, n, rho = g.H, g.n, g.rho
    x = _ball_samples(g.p, rho, samples, rng_seed)
    diff = centered(g._eval(x)[:, -1] - H._eval(x)[:, -1])
    gap0 = float(np.max(np.abs(diff)))

    h = 1e-3 * rho
    jh = H._jac(x)[:, -1, :]
    fd = np.empty_like(jh)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        fd[:, k] = centered(g._eval(x + e)[:, -1] - g._eval(x - e)[:, -1]) / (2 * h)
    gap1 = float(np.max(np.linalg.norm(fd - jh, axis=1)))

    def row_diff(y):
        return g._jac(y)[:, -1, :] - H._jac(y)[:, -1, :]

    hs = np.empty((len(x), n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        hs[:, :, k] = (row_diff(x + e) - row_diff(x - e)) / (2 * h)
    gap2 = float(np.max(np.abs(hs)))
    return GapRow(rho, gap0, gap1, gap2)


def collapse_sweep(H: FlattenedMap, halvings: int = 4, samples: int = 4000,
                   rng_seed: int = 0, rho0: float | None = None) -> list[GapRow]:
    rho = H.params.rho if rho0 is None else rho0
    rows = []
    for k in range(halvings + 1):
        rows.append(c1_c2_gap(build_collapse(H, rho / 2**k), samples, rng_seed))
    return rows


# ---------------------------------------------------------------------------
# normal-form demo on R^n


def nf_fold(x):
    x = np.asarray(x, dtype=float)
    y = x.copy()
    y[..., -1] = x[..., -1] ** 2
    return y


@dataclass(frozen=True)
class DemoReport:
    n: int
    r: float
    eps: float
    sup_c0: float
    sup_dn: float
    c0_bound: float
    dn_bound: float
    collapse_exact: bool
    agrees_outside: bool

    @property
    def passed(self) -> bool:
        return (self.sup_c0 < self.c0_bound and self.sup_dn < self.dn_bound
                and self.collapse_exact and self.agrees_outside)

    def as_dict(self):
        return asdict(self) | {"passed": self.passed}


def nf_fold_demo(r: float, eps: float, n: int, samples: int = 20000,
                 seed: int = 0) -> DemoReport:
    """f_nf = (x~, x_n^2) against g_nf = (x~, x_n^2 mu(|x|)) on R^n.

    mu is radial so that g_nf = f_nf exactly outside B(0, r).
    """
    if not (7 * r < eps and r * r < eps):
        raise PreconditionViolated(f"need 7r < eps and r^2 < eps, got r={r}, eps={eps}")
    mu = build_mu(r)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((samples, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    rad = np.concatenate([r * rng.random(samples) ** (1.0 / n)])
    x = v * rad[:, None]
    axis = np.zeros((2001, n))
    axis[:, -1] = np.linspace(-r, r, 2001)
    x = np.concatenate([x, axis])
    nx = np.linalg.norm(x, axis=1)
    m, m1, _ = mu.eval(nx)
    xn = x[:, -1]
    diff = xn**2 * (1.0 - m)
    unit_n = np.divide(xn, nx, out=np.zeros_like(xn), where=nx > 0)
    d_diff = 2 * xn * (1.0 - m) - xn**2 * m1 * unit_n

    inner = x[nx < r / 2]
    g_inner = inner.copy()
    g_inner[:, -1] = inner[:, -1] ** 2 * mu.value(np.linalg.norm(inner, axis=1))
    outer = v * (r * (1.0 + 3.0 * rng.random(samples)))[:, None]
    g_outer = outer.copy()
    g_outer[:, -1] = outer[:, -1] ** 2 * mu.value(np.linalg.norm(outer, axis=1))
    return DemoReport(n, r, eps, float(np.max(np.abs(diff))), float(np.max(np.abs(d_diff))),
                      r * r, 7 * r, bool(np.all(g_inner[:, -1] == 0.0)),
                      bool(np.array_equal(g_outer, nf_fold(outer))))


# ---------------------------------------------------------------------------
# flatness of f(S_f) near f(p)


@dataclass(frozen=True)
class FlatnessReport:
    """Last-coordinate deviation from 1/2 of F(f(S_f)) inside B(f(p), l).

    S_f meets the fibre over each x~ near p~ twice: on the implicit branch
    x_n = phi_impl(x~) in [1/4, 1/4 + delta/8] (through p) and on a second
    branch in (1/4 + delta/8, c]. A fibre shift can flatten only one sheet;
    the second is reported for reference.
    """

    branch_points: int
    branch_max_dev: float
    other_points: int
    other_min_dev: float
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return self.branch_points > 0 and self.branch_max_dev < self.tol

    def as_dict(self):
        return asdict(self) | {"passed": self.passed}


def _upper_branch(fmap: BaseMap, xt):
    """x_n in (1/4 + delta/8, c] with phi'(x_n) psi(|x~|^2) = 2."""
    s = np.sum(xt * xt, axis=-1)
    target = 2.0 / fmap.psi.value(s)
    lo = np.full_like(s, critical.equator(fmap))
    # step just past c so the bracket straddles the double root at psi = 4
    hi = np.full_like(s, critical.level_end(fmap) + 1e-6 * fmap.params.delta)
    phi = fmap.phi
    return critical.bracketed_newton(lambda t, y: phi.d1(t) - y, lambda t, y: phi.d2(t),
                                     lo, hi, args=(target,), coarse=1e-3, xtol=1e-14)


def flatness_check(H: FlattenedMap, samples: int = 4000, rng_seed: int = 0) -> FlatnessReport:
    fmap, l = H.fmap, H.params.l
    n = H.n
    z = critical.ball_lattice(n - 1, l, samples, rng_seed)
    z = np.concatenate([np.zeros((1, n - 1)), z])
    xt = critical.patch_point(z)
    target = np.zeros(n)
    target[-1] = 0.5

    def deviations(xn):
        x = np.concatenate([xt, xn[:, None]], axis=1)
        y = H.eval(x)
        inside = torus_distance(fmap.eval(x), target) < l
        return np.abs(y[inside, -1] - 0.5)

    lower = deviations(critical.eval_phi_implicit(fmap, xt))
    upper = deviations(np.asarray(_upper_branch(fmap, xt)))
    return FlatnessReport(len(lower), float(lower.max()) if len(lower) else float("nan"),
                          len(upper), float(upper.min()) if len(upper) else float("nan"))
