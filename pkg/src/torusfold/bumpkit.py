"""Scalar C-infinity profiles and the parameter record of the torus map.

Every profile evaluates to a triple ``(value, d1, d2)`` with closed-form
derivatives; values that need an antiderivative (the profile ``phi`` and the
transition step used by ``omega``/``mu``/``chi``) use a cumulative
Gauss-Legendre table, which is exact to rounding for these integrands.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    DerivativeBudgetExceeded,
    Infeasible,
    LobeBalanceFailure,
    NonPositiveWidth,
    OutOfRange,
)

A_MAX = 3.0 / 7.0
PSI_CENTER = 1.0 / 16.0
PSI_PEAK = 4.0
PHI_CENTER = 0.25


# ---------------------------------------------------------------------------
# primitive shapes


def bump(s):
    """Standard bump exp(1 - 1/(1-s^2)) on |s| < 1 and its two derivatives."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    si = np.where(inside, s, 0.0)
    q = 1.0 - si * si
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        b = np.exp(1.0 - 1.0 / q)
        g1 = -2.0 * si / (q * q)
        d1 = b * g1
        d2 = b * (4.0 * si * si / q**4 - (2.0 + 6.0 * si * si) / q**3)
    zero = np.zeros_like(s)
    return (np.where(inside, b, zero), np.where(inside, d1, zero),
            np.where(inside, d2, zero))


def bump_value(s):
    """Value of the standard bump alone (quadrature integrands)."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    si = np.where(inside, s, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - si * si)), 0.0)


class _Antiderivative:
    """Antiderivative of a smooth vectorised integrand, anchored at ``anchor``
    (where it is exactly 0), valid on ``[a, b]``."""

    def __init__(self, f: Callable, a: float, b: float, anchor: float,
                 cells: int = 2048, order: int = 8):
        self.f = f
        left = max(1, int(round(cells * (anchor - a) / (b - a))))
        right = max(1, cells - left)
        self.grid = np.concatenate([
            np.linspace(a, anchor, left + 1)[:-1],
            np.linspace(anchor, b, right + 1),
        ])
        self.anchor_index = left
        t, w = np.polynomial.legendre.leggauss(order)
        self._t, self._w = t, w
        pieces = self._segment(self.grid[:-1], self.grid[1:])
        cum = np.concatenate([[0.0], np.cumsum(pieces)])
        self.cum = cum - cum[left]
        self.cum[left] = 0.0

    def _segment(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        half = 0.5 * (hi - lo)
        pts = lo[..., None] + half[..., None] * (self._t + 1.0)
        return half * (self.f(pts) @ self._w)

    def __call__(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.grid[0], self.grid[-1])
        # integrate from the node nearest the anchor side for stability
        i = np.clip(np.searchsorted(self.grid, x) - 1, 0, len(self.grid) - 2)
        below = i < self.anchor_index
        node = np.where(below, i + 1, i)
        return self.cum[node] + self._segment(self.grid[node], x)

    @property
    def total(self) -> float:
        return float(self.cum[-1] - self.cum[0])


_STEP_INTEGRAL = _Antiderivative(lambda t: bump_value(2.0 * t - 1.0), 0.0, 1.0, 0.0)
_STEP_NORM = _STEP_INTEGRAL.total


def _on_mask(fn, mask, x, outputs):
    """Evaluate ``fn`` only where ``mask`` holds; zeros elsewhere."""
    outs = [np.zeros(x.shape) for _ in range(outputs)]
    if mask.any():
        for o, v in zip(outs, fn(x[mask])):
            o[mask] = v
    return outs


def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, normalised bump integral."""
    x = np.asarray(x, dtype=float)
    inner = (x > 0.0) & (x < 1.0)

    def core(t):
        b, b1, _ = bump(2.0 * t - 1.0)
        return _STEP_INTEGRAL(t) / _STEP_NORM, b / _STEP_NORM, 2.0 * b1 / _STEP_NORM

    v, d1, d2 = _on_mask(core, inner, x, 3)
    return np.where(x >= 1.0, 1.0, v), d1, d2


# ---------------------------------------------------------------------------
# profile bundle


@dataclass(frozen=True)
class SmoothProfile:
    kind: str
    support: tuple[float, float]
    _fn: Callable = field(repr=False, compare=False)
    meta: dict = field(default_factory=dict, compare=False)
    # optional (d1, d2) evaluator that skips the value (e.g. a quadrature)
    _dfn: Callable | None = field(default=None, repr=False, compare=False)

    def eval(self, x):
        """Return ``(value, d1, d2)`` as arrays (floats for scalar input)."""
        arr = np.asarray(x, dtype=float)
        v, d1, d2 = self._fn(arr)
        if arr.ndim == 0:
            return float(v), float(d1), float(d2)
        return v, d1, d2

    def value(self, x):
        return self.eval(x)[0]

    def _derivs(self, x):
        if self._dfn is None:
            return self.eval(x)[1:]
        arr = np.asarray(x, dtype=float)
        d1, d2 = self._dfn(arr)
        if arr.ndim == 0:
            return float(d1), float(d2)
        return d1, d2

    def d1(self, x):
        return self._derivs(x)[0]

    def d2(self, x):
        return self._derivs(x)[1]


def zero_profile() -> SmoothProfile:
    def fn(x):
        z = np.zeros_like(x)
        return z, z, z
    return SmoothProfile("zero", (0.0, 0.0), fn)


def build_psi(theta: float) -> SmoothProfile:
    """psi(x) = 4 exp(-t^4/(1-t^2)), t = (x - 1/16)/theta on |t| < 1."""
    if not theta > 0:
        raise NonPositiveWidth(f"theta must be positive, got {theta}")

    def fn(x):
        t = (x - PSI_CENTER) / theta
        inside = np.abs(t) < 1.0
        ti = np.where(inside, t, 0.0)
        q = 1.0 - ti * ti
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            g = ti**4 / q
            g1 = (4.0 * ti**3 - 2.0 * ti**5) / (q * q)
            g2 = (12.0 * ti**2 - 6.0 * ti**4 + 2.0 * ti**6) / q**3
            e = PSI_PEAK * np.exp(-g)
            v = e
            d1 = -e * g1 / theta
            d2 = e * (g1 * g1 - g2) / theta**2
        zero = np.zeros_like(x)
        return (np.where(inside, v, zero), np.where(inside, d1, zero),
                np.where(inside, d2, zero))

    return SmoothProfile("psi", (PSI_CENTER - theta, PSI_CENTER + theta), fn,
                         {"theta": theta})


# phi' in the scaled variable u = (x - 1/4)/delta, support [-1/4, 3/4]:
#   rising lobe P peaks at 1 at u = 1/8 with P(0) = 1/2,
#   negative lobe N1 on [-1/4, 1/8 - w] balances the area left of u = 0,
#   negative lobe N2 on [1/8, 3/4] balances the rest.
_U_LO, _U_HI, _U_PEAK = -0.25, 0.75, 0.125
_P_HALF = _U_PEAK / math.sqrt(math.log(2.0) / (1.0 + math.log(2.0)))
_N1 = (_U_LO, _U_PEAK - _P_HALF)
_N2 = (_U_PEAK, _U_HI)
PHI_D1_FLOOR = -0.75


def _lobe(u, lo, hi):
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    b, b1, b2 = bump((u - mid) / half)
    return b, b1 / half, b2 / half**2


def _lobe_value(u, lo, hi):
    return bump_value((u - 0.5 * (lo + hi)) / (0.5 * (hi - lo)))


def _phi_shape_value(a1, a2):
    def g(u):
        return (bump_value((u - _U_PEAK) / _P_HALF) - a1 * _lobe_value(u, *_N1)
                - a2 * _lobe_value(u, *_N2))
    return g


def _phi_shape(a1, a2):
    def g(u):
        p, p1, p2 = bump((u - _U_PEAK) / _P_HALF)
        n1, n11, n12 = _lobe(u, *_N1)
        n2, n21, n22 = _lobe(u, *_N2)
        return (p - a1 * n1 - a2 * n2,
                p1 / _P_HALF - a1 * n11 - a2 * n21,
                p2 / _P_HALF**2 - a1 * n12 - a2 * n22)
    return g


def _phi_amplitudes():
    rising = _Antiderivative(lambda u: bump_value((u - _U_PEAK) / _P_HALF),
                             _U_PEAK - _P_HALF, _U_PEAK + _P_HALF, 0.0)
    unit_lobe = _Antiderivative(bump_value, -1.0, 1.0, 0.0).total
    left_area = -float(rising(_U_PEAK - _P_HALF))   # area of P on [start, 0]
    right_area = float(rising(_U_PEAK + _P_HALF))   # area of P on [0, end]
    a1 = left_area / (0.5 * (_N1[1] - _N1[0]) * unit_lobe)
    a2 = right_area / (0.5 * (_N2[1] - _N2[0]) * unit_lobe)
    return a1, a2


def build_phi(delta: float) -> SmoothProfile:
    """phi with phi(1/4) = 0, phi'(1/4) = 1/2, phi'(1/4 + delta/8) = 1 and
    support [1/4 - delta/4, 1/4 + 3 delta/4]."""
    if not delta > 0:
        raise NonPositiveWidth(f"delta must be positive, got {delta}")
    a1, a2 = _phi_amplitudes()
    if not (0.0 < a1 <= -PHI_D1_FLOOR and 0.0 < a2 <= -PHI_D1_FLOOR):
        raise LobeBalanceFailure(f"negative lobe amplitudes {a1}, {a2} out of range")
    g = _phi_shape(a1, a2)
    area = _Antiderivative(_phi_shape_value(a1, a2), _U_LO, _U_HI, 0.0, cells=4096)
    if abs(area(_U_LO)) > 1e-13 or abs(area(_U_HI)) > 1e-13:
        raise LobeBalanceFailure("phi' does not integrate to zero on its support")

    def core(u, with_value):
        gv, g1, _ = g(u)
        if with_value:
            return delta * area(u), gv, g1 / delta
        return gv, g1 / delta

    def dfn(x):
        u = (x - PHI_CENTER) / delta
        return _on_mask(lambda v: core(v, False), (u > _U_LO) & (u < _U_HI), u, 2)

    def fn(x):
        u = (x - PHI_CENTER) / delta
        return _on_mask(lambda v: core(v, True), (u > _U_LO) & (u < _U_HI), u, 3)

    return SmoothProfile(
        "phi", (PHI_CENTER + _U_LO * delta, PHI_CENTER + _U_HI * delta), fn,
        {"delta": delta, "lobe_amplitudes": (a1, a2)}, dfn)


def _plateau(kind, inner, outer, rising, meta):
    """Even profile: 1 on |t| <= inner, 0 on |t| >= outer (or the reverse
    when ``rising``), bump-integral transition in between."""
    width = outer - inner

    def fn(x):
        ax = np.abs(x)
        sgn = np.where(x < 0, -1.0, 1.0)
        s, s1, s2 = smooth_step((ax - inner) / width)
        if rising:
            return s, sgn * s1 / width, s2 / width**2
        return 1.0 - s, -sgn * s1 / width, -s2 / width**2

    return SmoothProfile(kind, (-outer, outer), fn, meta)


def _check_caps(profile, caps):
    for order, cap in caps.items():
        got = sup_abs_derivative(profile, order)
        if not got < cap:
            raise DerivativeBudgetExceeded(
                f"{profile.kind}: sup|d{order}| = {got} exceeds {cap}")
    return profile


def build_omega(l: float) -> SmoothProfile:
    """omega = 1 on [-l, l], 0 for |t| >= 2l, |omega'| < 2/l, |omega''| < 8/l^2."""
    if not l > 0:
        raise NonPositiveWidth(f"l must be positive, got {l}")
    p = _plateau("omega", l, 2.0 * l, False, {"l": l})
    return _check_caps(p, {1: 0.99 * 2.0 / l, 2: 0.99 * 8.0 / l**2})


def build_mu(r: float) -> SmoothProfile:
    """mu = 0 on [-r/2, r/2], 1 for |t| >= r, |mu'| < 4/r."""
    if not r > 0:
        raise NonPositiveWidth(f"r must be positive, got {r}")
    p = _plateau("mu", 0.5 * r, r, True, {"r": r})
    return _check_caps(p, {1: 0.99 * 4.0 / r})


def build_chi(rho: float) -> SmoothProfile:
    """chi = 1 - mu: 1 on [0, rho/2], 0 beyond rho, |chi'| < 4/rho."""
    if not rho > 0:
        raise NonPositiveWidth(f"rho must be positive, got {rho}")
    p = _plateau("chi", 0.5 * rho, rho, False, {"rho": rho})
    return _check_caps(p, {1: 0.99 * 4.0 / rho})


def sup_abs_derivative(p: SmoothProfile, order: int, points: int = 20001) -> float:
    """Grid scan of |d_order| over the support, then bounded local refinement."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    lo, hi = p.support
    if not hi > lo:
        return 0.0
    grid = np.linspace(lo, hi, points)
    vals = np.abs(p.eval(grid)[order])
    i = int(np.argmax(vals))
    best = float(vals[i])
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, points - 1)]
    res = minimize_scalar(lambda x: -abs(p.eval(x)[order]), bounds=(a, b),
                          method="bounded", options={"xatol": 1e-14 * (hi - lo)})
    return max(best, float(-res.fun))


# ---------------------------------------------------------------------------
# parameters

P_POINT_LAST = 0.25
L_FRACTION = 0.2


@dataclass(frozen=True)
class MapParams:
    n: int
    r: float
    theta: float
    a: float
    delta: float
    M: float
    eps: float
    eps_prime: float
    b: float
    l: float
    rho: float
    W: float

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n"
                       for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str) -> "MapParams":
        kv = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            k, v = (s.strip() for s in line.split("=", 1))
            kv[k] = v
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        return cls(**{k: (int(v) if types[k] in (int, "int") else float(v))
                      for k, v in kv.items()})

    def replace(self, **kw) -> "MapParams":
        return dataclasses.replace(self, **kw)

    @property
    def shell_radius(self) -> float:
        """Largest |x~| on which psi(|x~|^2) can be nonzero."""
        return math.sqrt(PSI_CENTER + self.theta)


@dataclass(frozen=True)
class Constraint:
    name: str
    slack: float

    @property
    def passed(self) -> bool:
        return self.slack > 0


@dataclass(frozen=True)
class ConstraintReport:
    entries: tuple[Constraint, ...]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self) -> list[str]:
        return [e.name for e in self.entries if not e.passed]

    def __getitem__(self, name: str) -> Constraint:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {e.name: e.slack for e in self.entries}


def _rel(lhs: float, rhs: float) -> float:
    """Relative slack of lhs < rhs."""
    return (rhs - lhs) / abs(rhs) if rhs != 0 else -float(lhs >= rhs)


def _torus_gap(u, v):
    d = (u - v) % 1.0
    return min(d, 1.0 - d)


def r_conditions(n: int, r: float) -> dict[str, float]:
    """Slacks of the three geometric conditions on r (positive = satisfied).

    B(p, r) has last coordinate within r of 1/4; A(B(p, r)) lies in the box
    around Ap with half-widths (8r, 2r, ..., 2r); the hyperplane x_n = 0 is
    A-invariant, so A^-1(B(p, r)) misses it iff 0 is farther than r from 1/4
    in the last coordinate.
    """
    p = np.zeros(n)
    p[0] = 0.25
    p[-1] = P_POINT_LAST
    ap = np.zeros(n)
    ap[-1] = 0.5
    origin = np.zeros(n)

    def dist(x, y):
        d = (x - y) % 1.0
        return float(np.linalg.norm(np.minimum(d, 1.0 - d)))

    sep_last = _torus_gap(ap[-1], p[-1]) - (2.0 * r + r)
    preimage = _torus_gap(0.0, p[-1]) - r
    return {
        "A(B(p,r)) ∩ cl B(p,r) = ∅": sep_last / (3.0 * r),
        "A^-1(B(p,r)) ∩ {x_n=0} = ∅": preimage / r,
        "B(p,r) ∩ B(Ap,r) = ∅": (dist(p, ap) - 2.0 * r) / (2.0 * r),
        "B(Ap,r) ∩ B(0,r) = ∅": (dist(ap, origin) - 2.0 * r) / (2.0 * r),
    }


def verify_params(p: MapParams, psi: SmoothProfile | None = None) -> ConstraintReport:
    entries = [Constraint(k, v) for k, v in r_conditions(p.n, p.r).items()]
    entries += [
        Constraint("n ≥ 2", float(p.n - 1)),
        Constraint("0 < θ", 1.0 if p.theta > 0 else -1.0),
        Constraint("θ < r/2", _rel(p.theta, p.r / 2)),
        Constraint("0 < a", 1.0 if p.a > 0 else -1.0),
        Constraint("a < 3/7", _rel(p.a, A_MAX)),
        Constraint("0 < δ", 1.0 if p.delta > 0 else -1.0),
        Constraint("δ < 2θ", _rel(p.delta, 2 * p.theta)),
        Constraint("2Mrδ(1+a) < a", _rel(2 * p.M * p.r * p.delta * (1 + p.a), p.a)),
        Constraint("2M|x~|δ(1+a) < a on the ψ shell",
                   _rel(2 * p.M * p.shell_radius * p.delta * (1 + p.a), p.a)),
        Constraint("ε' < ε/50", _rel(p.eps_prime, p.eps / 50)),
        Constraint("0 < b", 1.0 if p.b > 0 else -1.0),
        Constraint("b < 1/4", _rel(p.b, 0.25)),
        Constraint("2b < W", _rel(2 * p.b, p.W)),
        Constraint("0 < l", 1.0 if p.l > 0 else -1.0),
        Constraint("l < b", _rel(p.l, p.b)),
        Constraint("0 < ρ", 1.0 if p.rho > 0 else -1.0),
        Constraint("ρ < l", _rel(p.rho, p.l)),
    ]
    if psi is not None:
        m_true = sup_abs_derivative(psi, 1)
        entries.append(Constraint("M ≥ sup|ψ'|", _rel(m_true, p.M * (1 + 1e-12))))
    return ConstraintReport(tuple(entries))


def find_r(n: int, start: float = 0.25, factor: float = 0.95, tries: int = 200) -> float:
    """Largest r on the scan ``start * factor**k`` passing all r-conditions with
    at least 1% slack."""
    r = start
    for _ in range(tries):
        if min(r_conditions(n, r).values()) >= 0.01:
            return r
        r *= factor
    raise Infeasible("no r in the scanned range satisfies the geometric conditions")


def solve_params(n: int, a: float = 0.3, eps: float = 1e-2, *,
                 margin: float = 0.9) -> MapParams:
    """Fix r, theta, delta, eps', W, b, l, rho in that order."""
    if not (0.0 < a < A_MAX):
        raise OutOfRange(f"a must lie in (0, 3/7), got {a}")
    if n < 2:
        raise OutOfRange(f"n must be at least 2, got {n}")
    if not eps > 0:
        raise OutOfRange(f"eps must be positive, got {eps}")
    r = find_r(n)
    theta = margin * r / 2
    psi = build_psi(theta)
    M = sup_abs_derivative(psi, 1)
    shell = math.sqrt(PSI_CENTER + theta)
    delta = margin * min(2 * theta,
                         a / (2 * M * r * (1 + a)),
                         a / (2 * M * shell * (1 + a)))
    eps_prime = margin * eps / 50
    provisional = MapParams(n=n, r=r, theta=theta, a=a, delta=delta, M=M,
                            eps=eps, eps_prime=eps_prime, b=float("nan"),
                            l=float("nan"), rho=float("nan"), W=float("nan"))
    return complete_flatten_params(provisional, psi=psi)


def complete_flatten_params(p: MapParams, psi: SmoothProfile | None = None,
                            margin: float = 0.9) -> MapParams:
    """Fill W, b, l, rho for an already-fixed (r, theta, delta, eps')."""
    from .critical import find_W_radius
    from .torusmap import BaseMap

    fmap = BaseMap(p, psi=psi)
    W = find_W_radius(fmap, p.eps_prime)
    b = min(margin * W / 2, margin * 0.25)
    # u - 1/2 grows like |z|^8 near 0; a fifth of b keeps the volume defect
    # of the fibre-localised F below 1e-12 (see flatten.volume_defect_bound)
    l = L_FRACTION * b
    # the fold strip of phi has width ~delta; C^1-smallness of the collapse
    # needs the ball inside it
    rho = min(l / 2, p.delta / 8)
    return p.replace(W=W, b=b, l=l, rho=rho)
