"""Unstable cones C_a = {v : |(v_2..v_n)| < a |v_1|} and their sampled
certification: invariance under the Jacobian and expansion by more than 7."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bumpkit import A_MAX, PHI_CENTER, PSI_CENTER, MapParams, verify_params
from .errors import OutOfRange, ZeroVector
from .torusmap import TorusMap, base_point, canonical, torus_distance

GROWTH_FLOOR = 7.0
CHUNK = 256


@dataclass(frozen=True)
class ConeSpec:
    a: float

    def __post_init__(self):
        if not 0 < self.a < A_MAX:
            raise OutOfRange(f"cone parameter must lie in (0, 3/7), got {self.a}")


def cone_ratio(v):
    """|(v_2..v_n)| / |v_1| along the last axis (inf when v_1 = 0)."""
    v = np.asarray(v, dtype=float)
    tail = np.linalg.norm(v[..., 1:], axis=-1)
    head = np.abs(v[..., 0])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.where(head > 0, tail / head, np.inf)


def in_cone(v, a: float) -> bool:
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ZeroVector("the zero vector has no cone membership")
    return bool(cone_ratio(v) < a)


def cone_vectors(n: int, a: float, m: int, rng) -> np.ndarray:
    """m unit vectors of the closed cone: a quarter on the boundary
    |(v_2..v_n)| = a|v_1|, the rest uniform in the tail ball."""
    d = n - 1
    g = rng.standard_normal((m, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radius = a * rng.random(m) ** (1.0 / d)
    radius[: max(1, m // 4)] = a
    v = np.empty((m, n))
    v[:, 0] = np.where(rng.random(m) < 0.5, -1.0, 1.0)
    v[:, 1:] = g * radius[:, None]
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _measure(jac, v):
    """Post-image ratio and growth for Jacobians (N, n, n), vectors (N, m, n)."""
    w = np.einsum("kij,kmj->kmi", jac, v)
    return cone_ratio(w), np.linalg.norm(w, axis=-1) / np.linalg.norm(v, axis=-1)


@dataclass
class PointReport:
    x: np.ndarray
    worst_ratio: float
    worst_growth: float
    ratio_witness: np.ndarray
    growth_witness: np.ndarray
    a: float

    @property
    def passed(self) -> bool:
        return self.worst_ratio < self.a and self.worst_growth > GROWTH_FLOOR


def check_point(fmap: TorusMap, x, a: float, m: int, rng_seed: int = 0) -> PointReport:
    if m < 1:
        raise ValueError("need at least one sample vector")
    x = np.asarray(x, dtype=float)
    v = cone_vectors(fmap.n, a, m, np.random.default_rng(rng_seed))
    ratio, growth = _measure(fmap.jac(x[None])[None][0], v[None])
    i, j = int(np.argmax(ratio[0])), int(np.argmin(growth[0]))
    return PointReport(x, float(ratio[0, i]), float(growth[0, j]), v[i], v[j], a)


def analytic_ratio_bound(p: MapParams, radius: float | None = None) -> float:
    """a/4 + 2 R ((1+a)/8) delta M + 5a/8 with R = |x~| (defaults to r)."""
    R = p.r if radius is None else radius
    return p.a / 4 + 2 * R * ((1 + p.a) / 8) * p.delta * p.M + 5 * p.a / 8


def ball_lattice_points(center, radius: float, density: int) -> np.ndarray:
    """Regular grid with ``density`` nodes per axis, restricted to the ball."""
    n = len(center)
    ax = np.linspace(-radius, radius, density)
    pts = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1).reshape(-1, n)
    pts = pts[np.linalg.norm(pts, axis=1) <= radius]
    return canonical(center + pts)


def support_points(p: MapParams, count: int, rng) -> np.ndarray:
    """Random points of the shell x strip where the Jacobian of f is not diagonal."""
    n = p.n
    g = rng.standard_normal((count, n - 1))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    s = PSI_CENTER + p.theta * (2 * rng.random(count) - 1)
    x = np.empty((count, n))
    x[:, :-1] = g * np.sqrt(s)[:, None]
    x[:, -1] = PHI_CENTER + p.delta * (rng.random(count) - 0.25)
    return canonical(x)


@dataclass
class CertReport:
    map_id: str
    a: float
    n: int
    seed: int
    lattice_size: int
    points: int
    pairs: int
    violations: int
    worst_ratio: float
    worst_growth: float
    worst_ratio_ball: float
    analytic_bound: float | None
    worst_ratio_support: float
    support_bound: float | None
    precondition_failures: list = field(default_factory=list)
    witnesses: list = field(default_factory=list)
    elapsed: float = field(default=0.0, compare=False)

    @property
    def worst_ratio_margin(self) -> float:
        return self.a - self.worst_ratio

    @property
    def worst_growth_margin(self) -> float:
        return self.worst_growth - GROWTH_FLOOR

    @property
    def passed(self) -> bool:
        ok = not self.precondition_failures and self.violations == 0 and self.pairs > 0
        if self.analytic_bound is not None and self.worst_ratio_ball > self.analytic_bound:
            ok = False
        return ok

    def as_dict(self) -> dict:
        """JSON-ready summary; wall-clock figures are left out so identical
        seeds give identical reports."""
        return {
            "map": self.map_id, "a": self.a, "n": self.n, "seed": self.seed,
            "lattice_size": self.lattice_size, "points": self.points, "pairs": self.pairs,
            "violations": self.violations, "worst_ratio": self.worst_ratio,
            "worst_ratio_margin": self.worst_ratio_margin,
            "worst_growth": self.worst_growth,
            "worst_growth_margin": self.worst_growth_margin,
            "worst_ratio_ball": self.worst_ratio_ball,
            "analytic_bound": self.analytic_bound,
            "worst_ratio_support": self.worst_ratio_support,
            "support_bound": self.support_bound,
            "precondition_failures": list(self.precondition_failures),
            "witnesses": [[list(map(float, x)), list(map(float, v))]
                          for x, v in self.witnesses],
            "passed": self.passed,
        }


def _chunk_job(fmap, a, pts, m, seed, index):
    rng = np.random.default_rng([seed, index])
    v = np.stack([cone_vectors(fmap.n, a, m, rng) for _ in range(len(pts))])
    ratio, growth = _measure(fmap.jac(pts), v)
    bad = (ratio >= a) | (growth <= GROWTH_FLOOR)
    wit = [(pts[k], v[k, j]) for k, j in zip(*np.nonzero(bad))][:5]
    return ratio.max(axis=1), growth.min(axis=1), int(bad.sum()), wit


def certify_cones(fmap: TorusMap, a: float, grid_density: int = 9,
                  samples_per_point: int = 32, rng_seed: int = 0,
                  random_points: int | None = None, threads: int = 1) -> CertReport:
    """Sample (x, v) pairs over a lattice of B(p, r), the perturbation
    support and random torus points; count cone exits and weak growth."""
    ConeSpec(a)
    n = fmap.n
    params = getattr(fmap, "params", None)
    bound = sbound = None
    if params is not None:
        rep = verify_params(params.replace(a=a))
        if not rep.passed:
            return CertReport(fmap.name, a, n, rng_seed, 0, 0, 0, 0, float("nan"),
                              float("nan"), float("nan"), None, float("nan"), None,
                              rep.failures())
        bound = analytic_ratio_bound(params.replace(a=a))
        sbound = analytic_ratio_bound(params.replace(a=a), params.shell_radius)
    r = params.r if params is not None else 0.08
    t0 = time.perf_counter()
    p = base_point(n)
    lattice = ball_lattice_points(p, r, grid_density)
    extra = len(lattice) if random_points is None else random_points
    rng = np.random.default_rng([rng_seed, 1 << 20])
    support = support_points(params, extra, rng) if params is not None else np.zeros((0, n))
    pts = np.concatenate([lattice, support, rng.random((extra, n))])
    chunks = [pts[i:i + CHUNK] for i in range(0, len(pts), CHUNK)]
    jobs = [(fmap, a, c, samples_per_point, rng_seed, k) for k, c in enumerate(chunks)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda j: _chunk_job(*j), jobs))
    else:
        results = [_chunk_job(*j) for j in jobs]
    ratio = np.concatenate([r_[0] for r_ in results])
    growth = np.concatenate([r_[1] for r_ in results])
    in_ball = torus_distance(pts, p) <= r
    in_support = np.zeros(len(pts), bool)
    if params is not None:
        in_support[len(lattice):len(lattice) + len(support)] = True
    rep = CertReport(
        fmap.name, a, n, rng_seed, len(lattice), len(pts), len(pts) * samples_per_point,
        sum(r_[2] for r_ in results), float(ratio.max()), float(growth.min()),
        float(ratio[in_ball].max()) if in_ball.any() else float("nan"), bound,
        float(ratio[in_support].max()) if in_support.any() else float("nan"), sbound,
        [], [w for r_ in results for w in r_[3]][:5])
    rep.elapsed = time.perf_counter() - t0
    return rep
