"""Euclidean projections onto the structured level sets used by the solver.

Every routine solves ``argmin_x 0.5 * ||x - y||^2`` over a closed convex set
and is exact up to floating point (sort-based thresholds or a monotone
one-dimensional dual search).

Targets
-------
- unit simplex ``{x >= 0, sum(x) = 1}``
- unit simplex intersected with a diagonal quadratic cap
  ``{x in simplex, sum(s2 * x**2) <= nu}``
- box intersected with a halfspace ``{lo <= x <= hi, c @ x <= nu}``
"""

import numpy as np

from .errors import ContractError, InfeasibleError

QUAD_TOL = 1e-13
_MAX_BISECT = 500


def project_simplex(y):
    """Project ``y`` onto the unit simplex with the sort-and-threshold rule."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise ContractError("project_simplex expects a non-empty vector")
    if not np.all(np.isfinite(y)):
        raise ContractError("non-finite entries in y")
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    x = np.maximum(y - theta, 0.0)
    # renormalise the active set so the sum is exact to rounding
    active = x > 0
    x[active] += (1.0 - x.sum()) / active.sum()
    return np.maximum(x, 0.0)


def _weighted_threshold(y, w):
    """Solve ``sum_i w_i * max(0, y_i - mu) = 1`` for ``mu``.

    ``w`` must be positive. The left-hand side is piecewise linear and
    decreasing in ``mu`` with breakpoints at the ``y_i``.
    """
    order = np.argsort(-y)
    ys = y[order]
    ws = w[order]
    cw = np.cumsum(ws)
    cwy = np.cumsum(ws * ys)
    mu = (cwy - 1.0) / cw
    # with the top-k entries active, mu must lie in [y_(k+1), y_(k)).
    nxt = np.append(ys[1:], -np.inf)
    ok = (mu < ys) & (mu >= nxt)
    if not ok.any():
        ok = mu < ys
    k = np.nonzero(ok)[0][0]
    return mu[k]


def _weighted_simplex_point(y, s2, lam):
    w = 1.0 / (1.0 + 2.0 * s2 * lam)
    mu = _weighted_threshold(y, w)
    return np.maximum(0.0, (y - mu) * w)


def min_variance_on_simplex(s2):
    """Return the simplex point minimising ``sum(s2 * x**2)`` and its value."""
    s2 = np.asarray(s2, dtype=float)
    inv = 1.0 / s2
    x = inv / inv.sum()
    return x, 1.0 / inv.sum()


def project_simplex_variance(y, s2, nu):
    """Project onto ``{x in simplex : sum(s2 * x**2) <= nu}``.

    The quadratic multiplier ``lam`` is found by bisection; for each trial
    ``lam`` the simplex multiplier solves a weighted threshold equation
    exactly. ``lam = 0`` (plain simplex projection) is tried first.

    Raises
    ------
    InfeasibleError
        If ``nu`` is below the minimum of ``sum(s2 * x**2)`` over the simplex.
    """
    y = np.asarray(y, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if y.shape != s2.shape or y.ndim != 1:
        raise ContractError("y and s2 must be vectors of equal length")
    if np.any(s2 <= 0):
        raise ContractError("variance weights must be strictly positive")
    x_min, q_min = min_variance_on_simplex(s2)
    if nu < q_min - QUAD_TOL:
        raise InfeasibleError(
            f"variance cap {nu!r} below simplex minimum {q_min!r}")

    x = project_simplex(y)
    if np.dot(s2, x * x) <= nu:
        return x
    if nu <= q_min + QUAD_TOL:
        return x_min

    def q(lam):
        z = _weighted_simplex_point(y, s2, lam)
        return np.dot(s2, z * z), z

    lo, hi = 0.0, 1.0
    qh, xh = q(hi)
    while qh > nu:
        lo, hi = hi, 2.0 * hi
        qh, xh = q(hi)
        if hi > 1e300:
            return x_min
    for _ in range(_MAX_BISECT):
        if qh >= nu - QUAD_TOL:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        qm, xm = q(mid)
        if qm > nu:
            lo = mid
        else:
            hi, qh, xh = mid, qm, xm
    return xh


def project_box_halfspace(y, lo, hi, c, nu):
    """Project onto ``{lo <= x <= hi, c @ x <= nu}``.

    The halfspace multiplier ``theta >= 0`` is located exactly: the map
    ``theta -> c @ clip(y - theta * c, lo, hi)`` is piecewise linear and
    nonincreasing, so the root is bracketed between sorted breakpoints and
    interpolated.

    ``lo``/``hi``/``c`` may be scalars, broadcast against ``y``.
    """
    y = np.asarray(y, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), y.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), y.shape)
    c = np.broadcast_to(np.asarray(c, dtype=float), y.shape)
    if np.any(lo > hi):
        raise InfeasibleError("empty box")
    cmin = np.sum(np.minimum(c * lo, c * hi))
    if cmin > nu + 1e-12 * max(1.0, abs(nu)):
        raise InfeasibleError(f"halfspace level {nu!r} below box minimum {cmin!r}")

    x = np.clip(y, lo, hi)
    if np.dot(c, x) <= nu:
        return x

    nz = c != 0
    bps = np.concatenate([(y[nz] - lo[nz]) / c[nz], (y[nz] - hi[nz]) / c[nz]])
    bps = np.unique(bps[bps > 0])
    bps = np.concatenate([[0.0], bps])
    # c @ clip(y - theta * c) - nu at every breakpoint at once
    vals = np.clip(y - bps[:, None] * c, lo, hi) @ c - nu
    idx = np.nonzero(vals <= 0)[0]
    if idx.size == 0:
        # only reachable through rounding when nu == cmin
        theta = bps[-1]
    else:
        k = idx[0]
        t0, t1 = bps[k - 1], bps[k]
        v0, v1 = vals[k - 1], vals[k]
        theta = t1 if v0 == v1 else t0 + (t1 - t0) * v0 / (v0 - v1)
    x = np.clip(y - theta * c, lo, hi)
    # guard against rounding on the boundary
    excess = np.dot(c, x) - nu
    if excess > 0:
        free = (x > lo) & (x < hi) & nz
        if free.any():
            cf = c[free]
            x[free] -= excess * cf / np.dot(cf, cf)
            x = np.clip(x, lo, hi)
    return x
