"""Monte Carlo risk estimates with exact binomial upper confidence bounds."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ContractError


@dataclass(frozen=True)
class RiskEstimate:
    n_viol: int
    n_samples: int
    delta: float
    upper: float

    @property
    def point(self):
        return self.n_viol / self.n_samples


def count_violations(problem, x, scenarios, chunk=20000):
    """Number of scenarios with ``max_j g_j(x, xi) > 0``."""
    scenarios = np.asarray(scenarios, dtype=float)
    if scenarios.ndim != 2 or scenarios.shape[0] == 0:
        raise ContractError("scenarios must be a non-empty (N, d) array")
    total = 0
    for start in range(0, scenarios.shape[0], chunk):
        g = problem.constraints(x, scenarios[start:start + chunk])
        total += int(np.count_nonzero(np.max(g, axis=-1) > 0))
    return total


def log_binom_cdf(k, n, alpha):
    """``log P(Bin(n, alpha) <= k)`` by summing log-gamma pmf terms."""
    if alpha <= 0.0:
        return 0.0
    if alpha >= 1.0:
        return 0.0 if k >= n else -math.inf
    i = np.arange(k + 1)
    logpmf = (gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)
              + i * math.log(alpha) + (n - i) * math.log1p(-alpha))
    return float(min(0.0, logsumexp(logpmf)))


def risk_upper_bound(n_viol, n_samples, delta):
    """Largest ``alpha`` with ``P(Bin(n_samples, alpha) <= n_viol) = delta``.

    The binomial CDF is strictly decreasing in ``alpha`` so bisection on its
    logarithm converges to the unique root; ``n_viol == n_samples`` gives 1.
    """
    if not (isinstance(n_viol, (int, np.integer))
            and isinstance(n_samples, (int, np.integer))):
        raise ContractError("counts must be integers")
    if n_samples < 1 or not 0 <= n_viol <= n_samples:
        raise ContractError(f"invalid counts {n_viol}/{n_samples}")
    if not 0.0 < delta < 1.0:
        raise ContractError("delta must lie in (0, 1)")
    if n_viol == n_samples:
        return 1.0
    if n_viol == 0:
        return -math.expm1(math.log(delta) / n_samples)
    target = math.log(delta)
    lo, hi = n_viol / n_samples, 1.0
    # bisect to machine precision: the CDF slope grows with n_samples
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if log_binom_cdf(n_viol, n_samples, mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def estimate_risk(problem, x, scenarios, delta):
    """Count violations on ``scenarios`` and attach the upper bound."""
    n = int(np.asarray(scenarios).shape[0])
    k = count_violations(problem, x, scenarios)
    return RiskEstimate(n_viol=k, n_samples=n, delta=delta,
                        upper=risk_upper_bound(k, n, delta))


def in_run_sample_size(alpha_low, n_mc):
    """Reduced sample size used between runs: ``min(n_mc, ceil(10 / alpha_low))``."""
    if not 0.0 < alpha_low < 1.0:
        raise ContractError("alpha_low must lie in (0, 1)")
    return int(min(n_mc, math.ceil(10.0 / alpha_low)))


def joint_confidence(delta, n_points):
    """Bonferroni confidence that all ``n_points`` bounds hold simultaneously."""
    return max(0.0, 1.0 - delta * n_points)
