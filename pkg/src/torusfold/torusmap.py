"""Torus geometry and the base maps A and f.

Points are float arrays of shape ``(..., n)``; map outputs are canonical
representatives in ``[0, 1)^n``. The bump argument of f uses the centred
representative (in ``[-1/2, 1/2)``) of the first n-1 coordinates, so the
radial term is a smooth function on the torus.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bumpkit import MapParams, SmoothProfile, build_phi, build_psi

MAX_DIM = 64


def canonical(x):
    y = np.mod(np.asarray(x, dtype=float), 1.0)
    return np.where(y >= 1.0, 0.0, y)


def centered(x):
    x = np.asarray(x, dtype=float)
    return x - np.floor(x + 0.5)


def local_lift(x, anchor):
    """Representative of x nearest to ``anchor``."""
    anchor = np.asarray(anchor, dtype=float)
    return anchor + centered(np.asarray(x, dtype=float) - anchor)


def torus_distance(x, y):
    return np.linalg.norm(centered(np.asarray(x) - np.asarray(y)), axis=-1)


def base_point(n: int) -> np.ndarray:
    """p = (1/4, 0, ..., 0, 1/4)."""
    p = np.zeros(n)
    p[0] = 0.25
    p[-1] = 0.25
    return p


def image_point(n: int) -> np.ndarray:
    """A p = f(p) = (0, ..., 0, 1/2)."""
    q = np.zeros(n)
    q[-1] = 0.5
    return q


@dataclass(frozen=True)
class TorusPoint:
    coords: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(float(c) for c in canonical(self.coords)))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.coords)

    def lift(self, anchor) -> np.ndarray:
        return local_lift(self.array, anchor)

    def distance(self, other: "TorusPoint") -> float:
        return float(torus_distance(self.array, other.array))


def _as_batch(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise ValueError(f"expected points of dimension {n}, got shape {x.shape}")
    return x.reshape(-1, n), x.ndim == 1


class TorusMap:
    """A smooth endomorphism of T^n with an analytic Jacobian."""

    name = "map"

    def __init__(self, n: int):
        if not 2 <= n <= MAX_DIM:
            raise ValueError(f"dimension must be in [2, {MAX_DIM}], got {n}")
        self.n = n

    def eval(self, x):
        xb, single = _as_batch(x, self.n)
        y = canonical(self._eval(xb))
        return y[0] if single else y

    def jac(self, x):
        xb, single = _as_batch(x, self.n)
        j = self._jac(xb)
        return j[0] if single else j

    def det(self, x):
        return np.linalg.det(self.jac(x))

    def _eval(self, x):
        raise NotImplementedError

    def _jac(self, x):
        raise NotImplementedError


class LinearMap(TorusMap):
    """A(x) = (8 x_1, 2 x_2, ..., 2 x_n) mod 1."""

    name = "A"

    def __init__(self, n: int):
        super().__init__(n)
        self.diag = np.full(n, 2.0)
        self.diag[0] = 8.0

    def _eval(self, x):
        return x * self.diag

    def _jac(self, x):
        return np.broadcast_to(np.diag(self.diag), (len(x), self.n, self.n)).copy()

    def det(self, x):
        xb, single = _as_batch(x, self.n)
        d = np.full(len(xb), float(np.prod(self.diag)))
        return d[0] if single else d


class BaseMap(LinearMap):
    """f(x) = (8 x_1, 2 x_2, ..., 2 x_n - phi(x_n) psi(sum_{k<n} x_k^2))."""

    name = "f"

    def __init__(self, params: MapParams, psi: SmoothProfile | None = None,
                 phi: SmoothProfile | None = None):
        super().__init__(params.n)
        self.params = params
        self.psi = psi if psi is not None else build_psi(params.theta)
        self.phi = phi if phi is not None else build_phi(params.delta)

    def radial_arg(self, x):
        x = np.asarray(x, dtype=float)
        xt = centered(x[..., :-1])
        return np.sum(xt * xt, axis=-1)

    def perturbation(self, x):
        """phi(x_n) psi(radial_arg), the amount subtracted from 2 x_n."""
        x = np.asarray(x, dtype=float)
        return self.phi.value(canonical(x[..., -1])) * self.psi.value(self.radial_arg(x))

    def in_support(self, x):
        """True where the perturbation term (or its derivatives) can be nonzero."""
        x = np.asarray(x, dtype=float)
        s = self.radial_arg(x)
        xn = canonical(x[..., -1])
        (slo, shi), (plo, phi_) = self.psi.support, self.phi.support
        return (s > slo) & (s < shi) & (xn > plo) & (xn < phi_)

    def _eval(self, x):
        y = x * self.diag
        y[:, -1] -= self.perturbation(x)
        return y

    def _jac(self, x):
        xt = centered(x[:, :-1])
        s = np.sum(xt * xt, axis=-1)
        ph, ph1, _ = self.phi.eval(canonical(x[:, -1]))
        ps, ps1, _ = self.psi.eval(s)
        j = super()._jac(x)
        j[:, -1, :-1] = -2.0 * xt * (ph * ps1)[:, None]
        j[:, -1, -1] = 2.0 - ph1 * ps
        return j

    def corner(self, x):
        """2 - phi'(x_n) psi(radial_arg): the residual whose zero set is S_f."""
        x = np.asarray(x, dtype=float)
        return 2.0 - self.phi.d1(canonical(x[..., -1])) * self.psi.value(self.radial_arg(x))

    def det(self, x):
        return 8.0 * 2.0 ** (self.n - 2) * self.corner(x)


def eval_A(x):
    x = np.asarray(x, dtype=float)
    return LinearMap(x.shape[-1]).eval(x)


@lru_cache(maxsize=32)
def _base_map(params: MapParams) -> BaseMap:
    return BaseMap(params)


def radial_arg(x, params: MapParams):
    return _base_map(params).radial_arg(x)


def eval_f(x, params: MapParams):
    return _base_map(params).eval(x)


def jac_f(x, params: MapParams):
    return _base_map(params).jac(x)


def det_jac_f(x, params: MapParams):
    return _base_map(params).det(x)
