"""Projected stochastic subgradient solver for one objective bound.

For a fixed bound ``nu`` the solver minimises the smoothed violation
probability ``E[max_j phi(g_j(x, xi); tau_j)]`` over ``X_nu`` for a short
sequence of shrinking smoothing parameters (stages). Each stage is a chain of
runs of random length; runs are compared through a Monte Carlo risk estimate
and the lowest-risk point seen so far (the incumbent) seeds the next stage.
"""

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import expit

from . import streams
from .errors import ContractError, UnsupportedCapability
from .risk import estimate_risk
from .smoothing import KINDS, dphi, phi, scale_schedule

_CHUNK = 64


@dataclass(frozen=True)
class RunConfig:
    """Algorithm parameters; defaults follow the published settings."""

    M: int = 20
    N_max: int = 1000
    R_min: int = 10
    R_max: int = 50
    K: int = 3
    tau_c: float = 0.1
    smoothing: str = "sigmoid"
    N_scale: int = 10_000
    s_tol: float = 1e-6
    omega: float = 1.0
    N_wc: int = 200
    N_var: int = 200
    N_batch: int = 20
    r_frac: float = 0.1
    N_check: int = 3
    N_term: int = 5
    delta1: float = 1e-4
    delta2: float = 1e-2
    gamma_incr: float = 10.0
    gamma_decr: float = 10.0
    N_MC: int = 100_000
    delta: float = 1e-6
    nu_frac: float = 0.005
    alpha_low: float = 1e-4
    N_1: int = 10
    # beyond the published list
    nu_spacing: float = 0.01
    max_points: int = 500
    random_N: bool = True
    strict_theory: bool = False
    risk_estimator: str = "sample"

    def __post_init__(self):
        ints = ("M", "N_max", "R_min", "R_max", "K", "N_scale", "N_wc",
                "N_var", "N_batch", "N_check", "N_term", "N_MC", "N_1",
                "max_points")
        for name in ints:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ContractError(f"{name} must be a positive integer")
        for name in ("tau_c", "s_tol", "omega", "r_frac", "delta1", "delta2",
                     "gamma_incr", "gamma_decr", "delta", "nu_frac",
                     "alpha_low", "nu_spacing"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.R_min > self.R_max:
            raise ContractError("R_min must not exceed R_max")
        if not self.delta1 < self.delta2:
            raise ContractError("delta1 must be smaller than delta2")
        if self.smoothing not in KINDS:
            raise ContractError(f"unknown smoothing kind {self.smoothing!r}")
        if self.risk_estimator not in ("sample", "exact"):
            raise ContractError("risk_estimator must be 'sample' or 'exact'")
        if not self.tau_c < 1 or not self.delta < 1 or not self.alpha_low < 1:
            raise ContractError("tau_c, delta and alpha_low must be below 1")

    @classmethod
    def from_dict(cls, overrides):
        known = {f.name for f in fields(cls)}
        unknown = set(overrides) - known
        if unknown:
            raise ContractError(f"unknown solver keys: {sorted(unknown)}")
        return cls(**overrides)

    def to_dict(self):
        return asdict(self)


@dataclass
class SubgradientSample:
    vector: np.ndarray
    active: np.ndarray


def _subgradient(problem, tau, x, batch, kind):
    g = problem.constraints(x, batch)
    if problem.m == 1:
        j = np.zeros(g.shape[0], dtype=int)
        gj = g[:, 0]
    else:
        # phi is increasing, so for the sigmoid the argmax of phi is the
        # argmax of the scaled constraint values
        score = g / tau if kind == "sigmoid" else phi(g, tau, kind)
        j = np.argmax(score, axis=1)
        gj = g[np.arange(g.shape[0]), j]
    tj = tau[j]
    if kind == "sigmoid":
        s = expit(gj / tj)
        w = s * (1.0 - s) / tj
    else:
        w = dphi(gj, tj, kind)
    grads = problem.gradient(x, batch, j)
    return (w[:, None] * grads).mean(axis=0), j


def stochastic_subgradient(problem, tau, x, batch, kind="sigmoid"):
    """Mini-batch subgradient of the smoothed max-violation objective.

    Each scenario contributes ``dphi(g_j) * grad g_j`` for the row ``j`` with
    the largest smoothed value (lowest index on ties).
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (problem.m,))
    vec, j = _subgradient(problem, tau, np.asarray(x, dtype=float), batch, kind)
    return SubgradientSample(vector=vec, active=j)


def _ball_point(rng, center, radius):
    n = center.size
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    return center + radius * rng.random() ** (1.0 / n) * u


def estimate_lipschitz(grad, center, radius, project, n_pairs, rng):
    """Largest ``||grad(y) - grad(z)|| / ||y - z||`` over random pairs.

    Pairs are drawn uniformly from the ball around ``center`` and projected.
    ``grad(y, z)`` must return both gradients (so callers can share samples).
    """
    best = 0.0
    for _ in range(n_pairs):
        y = project(_ball_point(rng, center, radius))
        z = project(_ball_point(rng, center, radius))
        dist = np.linalg.norm(y - z)
        if dist <= 1e-12:
            continue
        gy, gz = grad(y, z)
        best = max(best, np.linalg.norm(gy - gz) / dist)
    return best


def initial_step_lengths(rho, sigma2, N_max, R_min, base):
    """``gamma_1 = 1 / sqrt(rho * sigma2 * (N_max + 1) * R_min)``, then
    ``gamma_k = (base_k / base_1)**2 * gamma_1``."""
    base = np.asarray(base, dtype=float)
    gamma1 = 1.0 / math.sqrt(rho * sigma2 * (N_max + 1) * R_min)
    return (base / base[0]) ** 2 * gamma1


@dataclass
class StepEstimate:
    steps: np.ndarray
    rho: float
    sigma2: float
    floored: bool = False


def estimate_initial_step(problem, nu, x_ref, schedule, config, rng):
    """Initial step lengths for every stage from local sample estimates.

    The weak-convexity constant of the first-stage objective is estimated as
    a local Lipschitz constant of its ``N_batch``-sample gradient, and the
    second moment of the size-``M`` mini-batch subgradient as a maximum over
    ``N_var`` points, each averaged over ``N_batch`` mini-batches. Estimates
    of zero are floored at ``1e-12`` and flagged. See
    :func:`initial_step_lengths`.
    """
    prob = problem.at_level(nu)
    x_ref = np.asarray(x_ref, dtype=float)
    kind = schedule.kind
    tau = schedule.row(0)
    norm = np.linalg.norm(x_ref)
    radius = config.r_frac * norm if norm > 0 else config.r_frac

    def project(y):
        return prob.project(y, nu)

    def pair_grad(y, z):
        batch = prob.sample(rng, config.N_batch)
        return (_subgradient(prob, tau, y, batch, kind)[0],
                _subgradient(prob, tau, z, batch, kind)[0])

    rho = estimate_lipschitz(pair_grad, x_ref, radius, project, config.N_wc, rng)

    sigma2 = 0.0
    for _ in range(config.N_var):
        x = project(_ball_point(rng, x_ref, radius))
        batches = prob.sample(rng, config.N_batch * config.M).reshape(
            config.N_batch, config.M, -1)
        sq = [np.dot(v, v) for v in
              (_subgradient(prob, tau, x, b, kind)[0] for b in batches)]
        sigma2 = max(sigma2, float(np.mean(sq)))

    floored = rho <= 0 or sigma2 <= 0
    steps = initial_step_lengths(max(rho, 1e-12), max(sigma2, 1e-12),
                                 config.N_max, config.R_min, schedule.base)
    return StepEstimate(steps=steps, rho=rho, sigma2=sigma2, floored=floored)


@dataclass
class StageState:
    """Run history within one stage."""

    k: int
    tau: np.ndarray
    gamma: float
    alpha_start: float
    alpha_bar: list = field(default_factory=list)

    @property
    def runs(self):
        return len(self.alpha_bar)

    def best_so_far(self):
        """``hat[i] = min(hat[i-1], bar[i])`` with ``hat[0] = alpha_start``."""
        return np.minimum.accumulate(
            np.concatenate([[self.alpha_start], self.alpha_bar]))


def _window_change(hats, bars, r, width):
    """Largest relative decrease of the last ``width`` runs vs the best before them."""
    ref = hats[r - width]
    recent = np.asarray(bars[r - width:r])
    if ref == 0:
        return 0.0 if np.all(recent == 0) else -math.inf
    return float(np.max((ref - recent) / ref))


def update_step_and_termination(state, config):
    """Apply the step-length heuristic and the run termination test.

    Returns ``(terminate, gamma)``. Every ``N_check`` runs the step grows by
    ``gamma_incr`` when the window change is ``>= -delta1`` and shrinks by
    ``gamma_decr`` when it is ``<= -delta2``. Runs stop at ``R_max``, or from
    ``R_min`` on once every one of the last ``N_term`` runs is worse than the
    earlier best by more than ``delta1`` (relative).
    """
    r = state.runs
    if r < 1:
        raise ContractError("no completed runs")
    hats = state.best_so_far()
    bars = state.alpha_bar
    gamma = state.gamma
    if r % config.N_check == 0:
        change = _window_change(hats, bars, r, config.N_check)
        if change >= -config.delta1:
            gamma *= config.gamma_incr
        elif change <= -config.delta2:
            gamma /= config.gamma_decr
    if r >= config.R_max:
        return True, gamma
    if r >= config.R_min and r >= config.N_term:
        if _window_change(hats, bars, r, config.N_term) < -config.delta1:
            return True, gamma
    return False, gamma


@dataclass
class PointSolution:
    nu: float
    x: np.ndarray
    alpha_run: float
    risk: object
    schedule: object
    runs: int
    early_exit: bool = False


def draw_run_length(rng, config):
    """Iteration count of one run: uniform on ``1..N_max`` unless ``random_N`` is off."""
    if config.random_N:
        return int(rng.integers(1, config.N_max + 1))
    return config.N_max


def _run(prob, nu, x, tau, gamma, n_iter, config, rng, kind):
    d = prob.d
    left = n_iter - 1
    while left > 0:
        chunk = min(left, _CHUNK)
        batch = prob.sample(rng, chunk * config.M).reshape(chunk, config.M, d)
        for b in batch:
            g, _ = _subgradient(prob, tau, x, b, kind)
            x = prob.project(x - gamma * g, nu)
        left -= chunk
    return x


def solve_frontier_point(problem, nu, x0, base, initial_steps, config, seed,
                         run_sample, cert_sample, target_risk=None, log=None):
    """Approximately minimise the violation probability over ``X_nu``.

    Parameters
    ----------
    problem : Problem
    nu : float
        Objective bound (minimisation form).
    x0 : array
        Starting point inside ``X_nu``.
    base : array
        Unscaled smoothing sequence; rescaled here at ``x0``.
    initial_steps : array
        Step length per stage.
    seed : int or SeedSequence
        Root of this point's streams (key ``0`` scaling, ``(1, k, q)`` runs).
    run_sample, cert_sample : arrays
        Fixed scenario sets for in-run risk comparison and final
        certification. With ``risk_estimator="exact"`` runs are compared on
        the problem's exact risk instead and ``run_sample`` is unused.
    target_risk : float, optional
        Stop as soon as the incumbent's in-run bound falls below this.
    log : list, optional
        Receives one dict per run.

    Returns
    -------
    PointSolution
        The incumbent (or, with ``strict_theory``, the final iterate of a
        randomly chosen run) and its risk on ``cert_sample``.
    """
    prob = problem.at_level(nu)
    x0 = np.asarray(x0, dtype=float)
    kind = config.smoothing
    schedule = scale_schedule(prob, x0, base, config.N_scale, config.s_tol,
                              config.omega, streams.generator(seed, 0), kind=kind)

    if config.risk_estimator == "exact":
        if not prob.has_exact_risk:
            raise UnsupportedCapability(f"{prob.name} has no exact risk oracle")

        def run_risk(x):
            return prob.exact_risk(x)
    else:
        def run_risk(x):
            return estimate_risk(prob, x, run_sample, config.delta).upper

    x_hat = x0.copy()
    alpha_hat = run_risk(x_hat)
    total_runs = 0
    early = False
    for k in range(schedule.K):
        tau = schedule.row(k)
        state = StageState(k=k, tau=tau, gamma=float(initial_steps[k]),
                           alpha_start=alpha_hat)
        x_prev = x_hat.copy()
        ends = []
        while True:
            q = state.runs + 1
            rng = streams.generator(seed, 1, k, q)
            n_iter = draw_run_length(rng, config)
            start = x_hat if config.strict_theory else x_prev
            x_bar = _run(prob, nu, start.copy(), tau, state.gamma, n_iter,
                         config, rng, kind)
            alpha_bar = run_risk(x_bar)
            total_runs += 1
            if log is not None:
                log.append({"stage": k + 1, "run": q, "n_iter": n_iter,
                            "gamma": state.gamma, "alpha_bar": alpha_bar})
            state.alpha_bar.append(alpha_bar)
            if config.strict_theory:
                ends.append((alpha_bar, x_bar))
                if state.runs >= config.R_min:
                    break
                continue
            done, state.gamma = update_step_and_termination(state, config)
            if alpha_bar < alpha_hat:
                alpha_hat, x_hat = alpha_bar, x_bar
            x_prev = x_bar
            if target_risk is not None and alpha_hat < target_risk:
                early = True
                break
            if done:
                break
        if config.strict_theory:
            pick = int(streams.generator(seed, 2, k).integers(len(ends)))
            alpha_hat, x_hat = ends[pick]
        if early:
            break

    cert = estimate_risk(prob, x_hat, cert_sample, config.delta)
    return PointSolution(nu=nu, x=x_hat, alpha_run=alpha_hat, risk=cert,
                         schedule=schedule, runs=total_runs, early_exit=early)
