"""Vectorised bracketed root finding: bisection to a coarse width, then
safeguarded Newton polish that never leaves the current bracket."""

import numpy as np

from .errors import NoRoot


def bracketed_newton(fun, dfun, lo, hi, *, args=(), x0=None, coarse=1e-6, xtol=1e-12,
                     ftol=0.0, maxiter=200):
    """Solve ``fun(x, *args) = 0`` elementwise on ``[lo, hi]``.

    ``fun`` and ``dfun`` take an array of abscissae plus the matching slices
    of ``args`` (per-element data such as targets, broadcast to the bracket
    shape). Only unconverged elements are re-evaluated, so per-element data
    must go through ``args`` rather than a closure. ``fun(lo)`` and
    ``fun(hi)`` must differ in sign (or one of them vanish). ``coarse`` and
    ``xtol`` are relative to the initial bracket width. If ``x0`` is given
    (e.g. a neighbouring solution) the bisection phase is skipped wherever
    ``x0`` lies inside the bracket.
    """
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    shape = lo.shape
    lo, hi = lo.ravel().copy(), hi.ravel().copy()
    args = tuple(np.broadcast_to(np.asarray(a, dtype=float), shape).ravel() for a in args)

    def f(x, idx):
        return np.asarray(fun(x, *(a[idx] for a in args)), dtype=float)

    def df(x, idx):
        return np.asarray(dfun(x, *(a[idx] for a in args)), dtype=float)

    every = np.arange(lo.size)
    flo, fhi = f(lo, every), f(hi, every)
    if np.any(np.sign(flo) * np.sign(fhi) > 0):
        raise NoRoot("bracket does not straddle a root")
    width0 = np.where(hi > lo, hi - lo, 1.0)
    exact = (flo == 0) | (fhi == 0)
    root = np.where(flo == 0, lo, hi)
    # orient so that fun(lo) <= 0 <= fun(hi)
    swap = flo > 0
    lo, hi = np.where(swap, hi, lo), np.where(swap, lo, hi)

    if x0 is None:
        seeded = np.zeros(lo.size, dtype=bool)
    else:
        x0 = np.broadcast_to(np.asarray(x0, dtype=float), shape).ravel()
        seeded = (x0 - np.minimum(lo, hi)) * (np.maximum(lo, hi) - x0) >= 0

    idx = np.nonzero(~seeded & ~exact)[0]
    for _ in range(maxiter):
        idx = idx[np.abs(hi[idx] - lo[idx]) > coarse * width0[idx]]
        if not idx.size:
            break
        mid = 0.5 * (lo[idx] + hi[idx])
        neg = f(mid, idx) <= 0
        lo[idx[neg]] = mid[neg]
        hi[idx[~neg]] = mid[~neg]
    x = np.where(seeded, x0 if x0 is not None else 0.0, 0.5 * (lo + hi))

    idx = np.nonzero(~exact)[0]
    prev = np.full(lo.size, np.inf)
    for _ in range(maxiter):
        if not idx.size:
            break
        xi = x[idx]
        fx = f(xi, idx)
        # residual at rounding level: stop once it no longer decreases
        stalled = (fx == 0) | (np.abs(fx) >= prev[idx])
        prev[idx] = np.abs(fx)
        idx, xi, fx = idx[~stalled], xi[~stalled], fx[~stalled]
        if not idx.size:
            break
        neg = fx <= 0
        lo[idx[neg]] = xi[neg]
        hi[idx[~neg]] = xi[~neg]
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xi - fx / df(xi, idx)
        li, hi_ = lo[idx], hi[idx]
        inside = np.isfinite(xn) & ((xn - li) * (hi_ - xn) >= 0)
        xn = np.where(inside, xn, 0.5 * (li + hi_))
        x[idx] = xn
        done = (np.abs(xn - xi) <= xtol * width0[idx]) | (np.abs(fx) <= ftol)
        idx = idx[~done]

    x = np.where(exact, root, x).reshape(shape)
    return x if x.ndim else float(x)
