"""Smooth approximations of the step function and their parameter schedules.

Three families are provided:

``sigmoid``
    ``1 / (1 + exp(-y / tau))``; the solver default.
``cubic-under``
    zero below ``-tau``, one above ``0``, cubic blend on ``[-tau, 0]``.
``cubic-over``
    zero below ``0``, one above ``tau``, cubic blend on ``[0, tau]``; the
    only family that also converges to the step at the origin.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ContractError

KINDS = ("sigmoid", "cubic-under", "cubic-over")


def _check(tau, kind):
    if kind not in KINDS:
        raise ContractError(f"unknown smoothing kind {kind!r}")
    if np.any(np.asarray(tau) <= 0):
        raise ContractError("smoothing parameter must be positive")


def phi(y, tau, kind="sigmoid"):
    """Evaluate the smoothing function at ``y`` with parameter ``tau``.

    Broadcasts over ``y`` and ``tau``; returns a float for scalar input.
    """
    _check(tau, kind)
    y, tau = np.broadcast_arrays(np.asarray(y, float), np.asarray(tau, float))
    if kind == "sigmoid":
        out = expit(y / tau)
    else:
        shift = 0.0 if kind == "cubic-under" else 1.0
        u = y / tau - shift
        cubic = 1.0 - 2.0 * u**3 - 3.0 * u**2
        out = np.where(u < -1.0, 0.0, np.where(u > 0.0, 1.0, cubic))
    return out[()] if out.ndim == 0 else out


def dphi(y, tau, kind="sigmoid"):
    """First derivative of :func:`phi` with respect to ``y``."""
    _check(tau, kind)
    y, tau = np.broadcast_arrays(np.asarray(y, float), np.asarray(tau, float))
    if kind == "sigmoid":
        s = expit(y / tau)
        out = s * (1.0 - s) / tau
    else:
        shift = 0.0 if kind == "cubic-under" else 1.0
        u = y / tau - shift
        inside = (u >= -1.0) & (u <= 0.0)
        out = np.where(inside, (-6.0 * u**2 - 6.0 * u) / tau, 0.0)
    return out[()] if out.ndim == 0 else out


def d2phi(y, tau, kind="sigmoid"):
    """Second derivative of :func:`phi` (piecewise for the cubic kinds)."""
    _check(tau, kind)
    y, tau = np.broadcast_arrays(np.asarray(y, float), np.asarray(tau, float))
    if kind == "sigmoid":
        s = expit(y / tau)
        out = s * (1.0 - s) * (1.0 - 2.0 * s) / tau**2
    else:
        shift = 0.0 if kind == "cubic-under" else 1.0
        u = y / tau - shift
        inside = (u >= -1.0) & (u <= 0.0)
        out = np.where(inside, (-12.0 * u - 6.0) / tau**2, 0.0)
    return out[()] if out.ndim == 0 else out


def base_sequence(K, tau_c):
    """Return ``(1, tau_c, tau_c**2, ..., tau_c**(K-1))``."""
    if K < 1:
        raise ContractError("K must be at least 1")
    if not 0.0 < tau_c < 1.0:
        raise ContractError("tau_c must lie in (0, 1)")
    return tau_c ** np.arange(K, dtype=float)


@dataclass(frozen=True)
class SmoothingSchedule:
    """Per-stage, per-constraint smoothing parameters ``tau[k, j]``.

    ``tau[k, j] = beta[j] * base[k]`` with ``base[k] = tau_c**k``.
    """

    base: np.ndarray
    beta: np.ndarray
    kind: str = "sigmoid"

    def __post_init__(self):
        if np.any(self.beta <= 0) or np.any(self.base <= 0):
            raise ContractError("smoothing parameters must be positive")

    @property
    def tau(self):
        return np.outer(self.base, self.beta)

    @property
    def K(self):
        return len(self.base)

    def row(self, k):
        return self.base[k] * self.beta


def lower_median(values, axis=0):
    """Order-statistic median: the lower middle element for even counts."""
    v = np.sort(np.asarray(values, dtype=float), axis=axis)
    return np.take(v, (v.shape[axis] - 1) // 2, axis=axis)


def scale_schedule(problem, x_ref, base, n_scale, s_tol, omega, rng,
                   kind="sigmoid", scenarios=None):
    """Scale the base sequence at ``x_ref`` from a Monte Carlo sample.

    ``beta_j = omega * max(median_i |g_j(x_ref, xi_i)|, s_tol)``.

    ``scenarios`` can be supplied instead of drawing ``n_scale`` fresh ones.
    """
    if scenarios is None:
        if n_scale < 1:
            raise ContractError("n_scale must be at least 1")
        scenarios = problem.sample(rng, n_scale)
    g = np.atleast_2d(problem.constraints(x_ref, scenarios))
    med = lower_median(np.abs(g), axis=0)
    beta = omega * np.maximum(med, s_tol)
    return SmoothingSchedule(base=np.asarray(base, dtype=float), beta=beta,
                             kind=kind)
