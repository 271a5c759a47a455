"""The critical set S_f = {2 - phi'(x_n) psi(|x~|^2) = 0}: level radii, fold
classification, and the implicit functions x_n = phi_impl(x~) near p and
z_n = Phi(z~) near f(p)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bumpkit import PHI_CENTER, PSI_CENTER
from .errors import (
    BranchAmbiguity,
    DegenerateDenominator,
    LevelOutOfRange,
    NoRoot,
    NotCritical,
    NotFound,
)
from .rootfind import bracketed_newton
from .torusmap import BaseMap, canonical

FOLD_TOL = 1e-8
RESIDUAL_TOL = 1e-9
ENDPOINT_TOL = 1e-12


def residual(fmap: BaseMap, x):
    return fmap.corner(x)


def equator(fmap: BaseMap) -> float:
    """The level 1/4 + delta/8 where phi' peaks at 1."""
    return PHI_CENTER + fmap.params.delta / 8


@lru_cache(maxsize=64)
def _level_end(delta: float, phi) -> float:
    peak = PHI_CENTER + delta / 8
    hi = PHI_CENTER + 0.75 * delta
    grid = np.linspace(peak, hi, 4001)
    below = np.nonzero(phi.d1(grid) < 0.5)[0]
    top = grid[below[0]]
    return bracketed_newton(lambda x: phi.d1(x) - 0.5, lambda x: phi.d2(x),
                            peak, top, coarse=1e-6, xtol=1e-15)


def level_end(fmap: BaseMap) -> float:
    """c > 1/4 + delta/8 with phi'(c) = 1/2."""
    return float(_level_end(fmap.params.delta, fmap.phi))


@dataclass(frozen=True)
class LevelRadii:
    level: float
    d: float
    D: float
    c: float

    @property
    def coincident(self) -> bool:
        return self.d == self.D


def _psi_branch(fmap, target, side):
    """Solve psi(s) = target on one monotone side of the peak at 1/16."""
    psi = fmap.psi
    theta = fmap.params.theta
    target = np.asarray(target, dtype=float)
    far = PSI_CENTER + side * theta * (1 - 1e-12)
    return bracketed_newton(lambda s, y: psi.value(s) - y, lambda s, y: psi.d1(s),
                            np.full_like(target, PSI_CENTER), np.full_like(target, far),
                            args=(target,), coarse=1e-6, xtol=1e-14)


def solve_level_radii(fmap: BaseMap, level: float) -> LevelRadii:
    """Squared radii d <= D of the two spheres of S_f at height x_n = level."""
    c = level_end(fmap)
    slope = float(fmap.phi.d1(level))
    if slope < 0.5 - ENDPOINT_TOL:
        raise LevelOutOfRange(f"phi'({level}) = {slope} < 1/2")
    if abs(slope - 0.5) <= ENDPOINT_TOL:
        # double root of a quartic-flat peak: the two spheres coincide
        return LevelRadii(level, PSI_CENTER, PSI_CENTER, c)
    target = 2.0 / slope
    d = float(_psi_branch(fmap, target, -1.0))
    D = float(_psi_branch(fmap, target, +1.0))
    return LevelRadii(level, d, D, c)


def psi_band(fmap: BaseMap) -> tuple[float, float]:
    """[d0, d1] = {s : psi(s) >= 2}."""
    return (float(_psi_branch(fmap, 2.0, -1.0)), float(_psi_branch(fmap, 2.0, +1.0)))


@dataclass(frozen=True)
class CriticalSample:
    point: np.ndarray
    residual: float
    level: float
    radius: float
    fold: bool


def classify_fold(fmap: BaseMap, x, tol: float = FOLD_TOL) -> bool:
    """Fold iff phi''(x_n) psi(|x~|^2) != 0; ker Df = span(e_n) on S_f, and
    e_n is tangent to S_f exactly when the x_n-partial of the residual vanishes."""
    x = np.asarray(x, dtype=float)
    res = residual(fmap, x)
    if np.any(np.abs(res) > RESIDUAL_TOL):
        raise NotCritical(f"residual {np.max(np.abs(res))} exceeds {RESIDUAL_TOL}")
    score = np.abs(fmap.phi.d2(canonical(x[..., -1])) * fmap.psi.value(fmap.radial_arg(x)))
    out = score > tol
    return bool(out) if np.ndim(out) == 0 else out


def _sphere_directions(dim: int, count: int, rng) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass
class CriticalSampleSet:
    points: np.ndarray
    residual: np.ndarray
    level: np.ndarray
    radius: np.ndarray
    fold: np.ndarray
    radii: list

    def __len__(self):
        return len(self.level)

    def __iter__(self):
        for i in range(len(self)):
            yield CriticalSample(self.points[i], float(self.residual[i]),
                                 float(self.level[i]), float(self.radius[i]),
                                 bool(self.fold[i]))


def level_sweep(fmap: BaseMap, levels: int) -> np.ndarray:
    c = level_end(fmap)
    lv = np.linspace(PHI_CENTER, c, max(levels, 2))
    return np.unique(np.append(lv, equator(fmap)))


def sample_critical_set(fmap: BaseMap, levels: int, points_per_sphere: int,
                        seed: int = 0) -> CriticalSampleSet:
    n = fmap.n
    rng = np.random.default_rng(seed)
    dirs = _sphere_directions(n - 1, points_per_sphere, rng)
    pts, lvl, rad, radii = [], [], [], []
    for level in level_sweep(fmap, levels):
        lr = solve_level_radii(fmap, level)
        radii.append(lr)
        for sq in ((lr.d,) if lr.coincident else (lr.d, lr.D)):
            rr = math.sqrt(sq)
            block = np.empty((len(dirs), n))
            block[:, :-1] = rr * dirs
            block[:, -1] = level
            pts.append(block)
            lvl.append(np.full(len(dirs), level))
            rad.append(np.full(len(dirs), rr))
    points = canonical(np.concatenate(pts))
    res = residual(fmap, points)
    fold = classify_fold(fmap, points)
    return CriticalSampleSet(points, res, np.concatenate(lvl), np.concatenate(rad),
                             np.atleast_1d(fold), radii)


# ---------------------------------------------------------------------------
# implicit functions


def _implicit_offset(fmap: BaseMap, xt, x0=None):
    """e(x~) = phi_impl(x~) - 1/4, on the branch through (p~, 1/4)."""
    xt = np.asarray(xt, dtype=float)
    s = np.sum(xt * xt, axis=-1)
    pv = fmap.psi.value(s)
    if np.any(pv < 2.0):
        raise NoRoot("psi(|x~|^2) < 2: point lies outside the implicit patch")
    target = 2.0 / pv
    phi = fmap.phi
    top = fmap.params.delta / 8
    if x0 is None:
        # linearise phi' at 1/4; the safeguarded solve repairs poor seeds
        d1, d2 = phi.d1(PHI_CENTER), phi.d2(PHI_CENTER)
        seed = np.clip((target - d1) / d2, 0.0, top)
    else:
        seed = np.asarray(x0, dtype=float) - PHI_CENTER
    e = bracketed_newton(lambda e, y: phi.d1(PHI_CENTER + e) - y,
                         lambda e, y: phi.d2(PHI_CENTER + e),
                         np.zeros_like(s), np.full_like(s, top), args=(target,), x0=seed,
                         coarse=1e-3, xtol=1e-14)
    e = np.asarray(e)
    if np.any((e < 0) | (e > top)):
        raise BranchAmbiguity("Newton iterate left [1/4, 1/4 + delta/8]")
    return e, s, pv


def eval_phi_implicit(fmap: BaseMap, xt, x0=None):
    e, _, _ = _implicit_offset(fmap, xt, x0)
    out = PHI_CENTER + e
    return float(out) if np.ndim(out) == 0 else out


def grad_phi_implicit(fmap: BaseMap, xt):
    xt = np.asarray(xt, dtype=float)
    e, s, pv = _implicit_offset(fmap, xt)
    t = PHI_CENTER + e
    denom = fmap.phi.d2(t) * pv
    if np.any(np.abs(denom) < 1e-12):
        raise DegenerateDenominator("phi''(phi_impl) psi vanishes")
    coef = -2.0 * fmap.phi.d1(t) * fmap.psi.d1(s) / denom
    return xt * np.asarray(coef)[..., None]


def patch_point(z):
    """The local inverse branch of A on {z_n = 0} through p~: (1/4 + z_1/8, z_2/2, ...)."""
    z = np.asarray(z, dtype=float)
    xt = z / 2.0
    xt[..., 0] = PHI_CENTER + z[..., 0] / 8.0
    return xt


def _inverse_scale(dim):
    sc = np.full(dim, 0.5)
    sc[0] = 0.125
    return sc


def Phi_minus_half(fmap: BaseMap, z):
    """Phi(z~) - 1/2, evaluated without cancellation against 1/2."""
    xt = patch_point(z)
    e, s, pv = _implicit_offset(fmap, xt)
    return 2.0 * e - fmap.phi.value(PHI_CENTER + e) * pv


def eval_Phi(fmap: BaseMap, z):
    out = 0.5 + Phi_minus_half(fmap, z)
    return float(out) if np.ndim(out) == 0 else out


def Phi_derivatives(fmap: BaseMap, z):
    """(Phi - 1/2, grad Phi, Hessian Phi) at z~, analytic.

    On S_f, 2 - phi' psi = 0 kills the d(phi_impl) term, so
    dPhi/dx~_j = -2 x~_j phi(phi_impl) psi'(s).
    """
    z = np.asarray(z, dtype=float)
    xt = patch_point(z)
    e, s, pv = _implicit_offset(fmap, xt)
    t = PHI_CENTER + e
    ph, ph1, ph2 = fmap.phi.eval(t)
    _, ps1, ps2 = fmap.psi.eval(s)
    ph, ph1, ph2, ps1, ps2 = (np.asarray(a)[..., None] for a in (ph, ph1, ph2, ps1, ps2))
    dim = xt.shape[-1]
    sc = _inverse_scale(dim)
    gx = -2.0 * xt * ph * ps1
    # d phi_impl / d x~_i
    dphi = -2.0 * xt * ph1 * ps1 / (ph2 * np.asarray(pv)[..., None])
    hx = (-2.0 * ph * ps1)[..., None] * np.eye(dim) \
        - 2.0 * xt[..., None, :] * (ph1 * ps1)[..., None] * dphi[..., :, None] \
        - 4.0 * (ph * ps2)[..., None] * xt[..., :, None] * xt[..., None, :]
    val = 2.0 * e - np.asarray(fmap.phi.value(t)) * pv
    return val, gx * sc, hx * sc[:, None] * sc[None, :]


def ball_lattice(dim: int, radius: float, count: int = 10_000, seed: int = 0) -> np.ndarray:
    """Deterministic points filling B(0, radius) in R^dim, origin excluded.

    Regular grid for dim <= 3; seeded uniform ball samples plus axis rays
    otherwise.
    """
    if dim <= 3:
        vol_frac = {1: 1.0, 2: math.pi / 4, 3: math.pi / 6}[dim]
        k = int(math.ceil((count / vol_frac) ** (1.0 / dim)))
        k += (k + 1) % 2  # odd so the axes are on the grid
        ax = np.linspace(-radius, radius, k)
        pts = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), -1).reshape(-1, dim)
        pts = pts[np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)]
    else:
        rng = np.random.default_rng(seed)
        v = rng.standard_normal((count, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts = v * radius * rng.random(count)[:, None] ** (1.0 / dim)
        rays = np.linspace(radius / 20, radius, 20)
        axes = np.concatenate([np.eye(dim), -np.eye(dim)])
        pts = np.concatenate([pts, (axes[:, None, :] * rays[None, :, None]).reshape(-1, dim)])
    return pts[np.linalg.norm(pts, axis=1) > 0]


@dataclass(frozen=True)
class PhiBounds:
    radius: float
    sup_value: float
    sup_grad: float
    sup_hess: float
    worst_quadratic_ratio: float
    worst_linear_ratio: float

    def holds(self, eps_prime: float) -> bool:
        return (self.sup_value < eps_prime and self.sup_grad < eps_prime
                and self.sup_hess < eps_prime
                and self.worst_quadratic_ratio < eps_prime
                and self.worst_linear_ratio < eps_prime)


def Phi_bounds(fmap: BaseMap, radius: float, count: int = 10_000) -> PhiBounds:
    z = ball_lattice(fmap.n - 1, radius, count)
    val, grad, hess = Phi_derivatives(fmap, z)
    nz = np.linalg.norm(z, axis=1)
    ag = np.max(np.abs(grad), axis=1)
    return PhiBounds(radius, float(np.max(np.abs(val))), float(np.max(ag)),
                     float(np.max(np.abs(hess))),
                     float(np.max(np.abs(val) / nz**2)), float(np.max(ag / nz)))


def patch_radius(fmap: BaseMap) -> float:
    """Largest z-radius whose patch preimage keeps psi(|x~|^2) >= 2.

    |x~|^2 - 1/16 ranges over [-w/16 + w^2/64, w/16 + w^2/4] on B(0, w)
    (z_1 = +-w extremes, or the other coordinates), so it suffices that
    w/16 + w^2/4 <= 1/16 - d0 and w/16 <= d1 - 1/16.
    """
    d0, d1 = psi_band(fmap)
    half = min(PSI_CENTER - d0, d1 - PSI_CENTER)
    # w^2/4 + w/16 - half = 0
    return (-1 / 16 + math.sqrt(1 / 256 + half)) * 2.0


def find_W_radius(fmap: BaseMap, eps_prime: float, count: int = 4000,
                  factor: float = 0.85, w_min: float = 1e-6) -> float:
    """Largest scanned radius on which all Phi bounds hold below eps_prime."""
    w = min(patch_radius(fmap) * 0.999, 0.5)
    while w >= w_min:
        try:
            ok = Phi_bounds(fmap, w, count).holds(eps_prime)
        except (NoRoot, BranchAmbiguity):
            ok = False
        if ok:
            return float(w)
        w *= factor
    raise NotFound(f"no radius >= {w_min} satisfies the Phi bounds for eps' = {eps_prime}")
