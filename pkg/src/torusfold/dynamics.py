"""Orbit, curve-growth, coverage, ball-cover and interior experiments.

All of these are sampled diagnostics in floating point. Multiplication by 8
mod 1 discards three mantissa bits per step, so after ~18 iterates the first
coordinate of a double-precision orbit is exactly 0; coverage experiments
accumulate visited cells from the early iterates, where the cloud still
carries information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conefield import cone_ratio
from .errors import ConeExit, PreconditionViolated
from .torusmap import LinearMap, TorusMap, canonical, centered, torus_distance

RESAMPLE = 1e-3
MAX_CURVE_POINTS = 2_000_000


@dataclass
class OrbitRecord:
    x0: np.ndarray
    points: np.ndarray  # (steps, n): f(x0), f^2(x0), ...

    @property
    def last(self) -> np.ndarray:
        return self.points[..., -1]

    def rows(self):
        for k, pt in enumerate(self.points, start=1):
            yield [k, *pt]


def iterate_orbit(fmap: TorusMap, x0, steps: int) -> OrbitRecord:
    """Orbits of one point (shape (n,)) or a cloud (shape (N, n))."""
    if steps < 1:
        raise ValueError("steps must be at least 1")
    x = canonical(np.asarray(x0, dtype=float))
    out = np.empty((steps,) + x.shape)
    for k in range(steps):
        x = fmap.eval(x)
        out[k] = x
    return OrbitRecord(np.asarray(x0, dtype=float), out)


# ---------------------------------------------------------------------------
# curves


@dataclass
class CurveState:
    """A curve beta(t) = x0 + t v, t in [0, length], pushed forward ``index``
    times. ``params`` are the sample parameters, ``points`` their images
    lifted to R^n by unwrapping consecutive differences."""

    x0: np.ndarray
    direction: np.ndarray
    length: float
    params: np.ndarray
    points: np.ndarray
    index: int = 0

    @property
    def diameter(self) -> float:
        return curve_diameter(self.points)

    def tangents(self) -> np.ndarray:
        return np.diff(self.points, axis=0)


def curve_diameter(points: np.ndarray) -> float:
    """Two-sweep estimate: farthest point from an end, then farthest from that."""
    a = points[np.argmax(np.linalg.norm(points - points[0], axis=1))]
    return float(np.max(np.linalg.norm(points - a, axis=1)))


def initial_curve(x0, direction, length: float, pieces: int = 16) -> CurveState:
    x0 = canonical(np.asarray(x0, dtype=float))
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    t = np.linspace(0.0, length, pieces + 1)
    return CurveState(x0, v, length, t, x0 + t[:, None] * v, 0)


def _push(fmap: TorusMap, c: CurveState, t: np.ndarray, k: int) -> np.ndarray:
    x = canonical(c.x0 + t[:, None] * c.direction)
    for _ in range(k):
        x = fmap.eval(x)
    # unwrap to a continuous lift anchored at the first point
    steps = centered(np.diff(x, axis=0))
    return np.concatenate([x[:1], x[:1] + np.cumsum(steps, axis=0)])


def evolve_curve(fmap: TorusMap, initial: CurveState, steps: int, a: float,
                 threshold: float = RESAMPLE) -> list[float]:
    """Diameter after 0, 1, ..., steps iterates.

    Images are recomputed from the initial parametrisation; a segment longer
    than ``threshold`` gets its parameter midpoint inserted until none does.
    """
    c = initial
    if np.any(cone_ratio(c.tangents()) >= a):
        raise PreconditionViolated("initial curve is not tangent to the cone")
    history = [c.diameter]
    t = c.params
    for k in range(1, steps + 1):
        pts = _push(fmap, c, t, k)
        while True:
            seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            long_ = seg > threshold
            if not long_.any():
                break
            if len(t) + long_.sum() > MAX_CURVE_POINTS:
                raise ConeExit("curve resampling exceeded the point budget")
            mids = 0.5 * (t[:-1] + t[1:])[long_]
            t = np.sort(np.concatenate([t, mids]))
            pts = _push(fmap, c, t, k)
        if np.any(cone_ratio(np.diff(pts, axis=0)) >= a):
            raise ConeExit(f"a resampled tangent left the cone at iterate {k}")
        c = CurveState(c.x0, c.direction, c.length, t, pts, k)
        history.append(c.diameter)
    return history


def growth_ratios(history: list[float], saturation: float) -> list[float]:
    """Per-step ratios while the previous diameter is still below saturation."""
    out = []
    for d0, d1 in zip(history, history[1:]):
        if d0 > saturation:
            break
        out.append(d1 / d0)
    return out


# ---------------------------------------------------------------------------
# coverage


@dataclass
class CoverageGrid:
    resolution: int
    n: int
    visited: np.ndarray = field(repr=False)
    history: list = field(default_factory=list)

    @classmethod
    def empty(cls, n: int, resolution: int) -> "CoverageGrid":
        return cls(resolution, n, np.zeros(resolution**n, dtype=bool))

    def cells(self, x) -> np.ndarray:
        idx = np.minimum((canonical(x) * self.resolution).astype(np.int64), self.resolution - 1)
        return np.ravel_multi_index(idx.T, (self.resolution,) * self.n)

    def mark(self, x):
        self.visited[self.cells(x)] = True
        self.history.append(self.fraction)

    @property
    def fraction(self) -> float:
        return float(self.visited.mean())

    @property
    def covered_at(self) -> int | None:
        """First iterate index (0 = seed cloud) with full coverage."""
        for k, f in enumerate(self.history):
            if f == 1.0:
                return k
        return None


def ball_cloud(center, radius: float, samples: int, seed: int = 0) -> np.ndarray:
    center = np.asarray(center, dtype=float)
    n = len(center)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((samples, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return canonical(center + v * radius * rng.random(samples)[:, None] ** (1.0 / n))


def coverage_scan(fmap: TorusMap, seed_center, seed_radius: float, grid_resolution: int,
                  max_iters: int, samples: int, seed: int = 0,
                  stop_when_full: bool = True, plateau: int | None = None) -> CoverageGrid:
    """Mark grid cells visited by the forward images of a seed ball.

    Stops at full coverage (if ``stop_when_full``) or once the covered
    fraction has been unchanged for ``plateau`` consecutive iterates.
    """
    if not seed_radius > 0:
        raise PreconditionViolated("seed radius must be positive")
    x = ball_cloud(seed_center, seed_radius, samples, seed)
    grid = CoverageGrid.empty(fmap.n, grid_resolution)
    grid.mark(x)
    for _ in range(max_iters):
        x = fmap.eval(x)
        grid.mark(x)
        if stop_when_full and grid.fraction == 1.0:
            break
        h = grid.history
        if plateau and len(h) > plateau and h[-1] == h[-1 - plateau]:
            break
    return grid


# ---------------------------------------------------------------------------
# ball cover


@dataclass
class BallCover:
    n: int
    eps: float
    radius: float
    centers: np.ndarray
    m: int
    union_covers: bool
    images_cover: bool
    worst_image_fraction: float

    @property
    def passed(self) -> bool:
        return self.union_covers and self.images_cover and 2 * self.radius < self.eps


def ball_cover_iterates(eps: float, min_expansion: float = 2.0) -> int:
    """Smallest m with min_expansion^m * eps/2 >= 1."""
    return max(0, math.ceil(math.log(2.0 / eps) / math.log(min_expansion) - 1e-12))


def build_ball_cover(eps: float, n: int, samples_per_ball: int = 2000,
                     seed: int = 0) -> BallCover:
    """Balls of diameter < eps on a regular grid, and the A^m check that each
    image cloud meets every cell of the eps-lattice."""
    if not eps > 0:
        raise PreconditionViolated("eps must be positive")
    radius = 0.49 * eps
    k = math.ceil(math.sqrt(n) / (2 * radius))
    ax = (np.arange(k) + 0.5) / k
    centers = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), -1).reshape(-1, n)

    fine = max(4, int(math.ceil(4 / eps)))
    fax = (np.arange(fine) + 0.5) / fine
    probe = np.stack(np.meshgrid(*([fax] * n), indexing="ij"), -1).reshape(-1, n)
    nearest = np.min(torus_distance(probe[:, None, :], centers[None, :, :]), axis=1)
    union = bool(np.all(nearest < radius))

    m = ball_cover_iterates(eps)
    A = LinearMap(n)
    res = int(round(1 / eps))
    worst = 1.0
    rng = np.random.default_rng(seed)
    for c in centers:
        cloud = ball_cloud(c, radius, samples_per_ball, int(rng.integers(2**31)))
        for _ in range(m):
            cloud = A.eval(cloud)
        grid = CoverageGrid.empty(n, res)
        grid.mark(cloud)
        worst = min(worst, grid.fraction)
    return BallCover(n, eps, radius, centers, m, union, worst == 1.0, worst)


# ---------------------------------------------------------------------------
# interior of images


@dataclass(frozen=True)
class InteriorReport:
    nonempty: bool
    inscribed_radius: float
    cell: float


def interior_nonempty_check(fmap: TorusMap, ball_center, ball_radius: float,
                            samples: int = 20000, seed: int = 0,
                            cells_per_axis: int = 8) -> InteriorReport:
    """Look for a fully occupied (2j+1)^n block of cubic cells in the image
    cloud. Cells are sized from the smallest nonzero image extent, so a cloud
    flattened into a hyperplane never fills a block."""
    x = ball_cloud(ball_center, ball_radius, samples, seed)
    y = fmap.eval(x)
    y = y[0] + centered(y - y[0])
    lo, hi = y.min(axis=0), y.max(axis=0)
    ext = hi - lo
    pos = ext[ext > 0]
    if len(pos) == 0:
        return InteriorReport(False, 0.0, 0.0)
    h = float(pos.min()) / cells_per_axis
    shape = np.maximum(np.ceil(ext / h).astype(int), 1)
    if np.prod(shape.astype(float)) > 5e7:
        raise PreconditionViolated("image too anisotropic for the occupancy grid")
    idx = np.minimum(((y - lo) / h).astype(int), shape - 1)
    occ = np.zeros(tuple(shape), dtype=bool)
    occ[tuple(idx.T)] = True
    best = 0
    j = 1
    while 2 * j + 1 <= shape.min():
        if not _has_full_block(occ, 2 * j + 1):
            break
        best = j
        j += 1
    return InteriorReport(best > 0, (best + 0.5) * h if best else 0.0, h)


def _has_full_block(occ: np.ndarray, w: int) -> bool:
    """Any w^n sub-block entirely True? (summed-area table)"""
    s = occ.astype(np.int64)
    for ax in range(occ.ndim):
        s = np.cumsum(s, axis=ax)
        s = np.concatenate([np.zeros_like(s.take([0], axis=ax)), s], axis=ax)
    total = np.zeros(tuple(d - w + 1 for d in occ.shape), dtype=np.int64)
    if min(total.shape) <= 0:
        return False
    n = occ.ndim
    for corner in range(2**n):
        sl = []
        sign = 1
        for ax in range(n):
            if corner >> ax & 1:
                sl.append(slice(w, None))
            else:
                sl.append(slice(0, s.shape[ax] - w))
                sign = -sign
        total += sign * s[tuple(sl)]
    return bool(np.any(total == w**n))
