"""Tracing the efficient frontier and solving for a fixed risk level."""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import streams
from .errors import ContractError, InfeasibleError, InitializationError
from .risk import in_run_sample_size
from .smoothing import base_sequence, scale_schedule
from .solver import RunConfig, estimate_initial_step, solve_frontier_point


@dataclass
class FrontierPoint:
    index: int
    nu: float
    x: np.ndarray
    alpha_point: float
    alpha_upper: float
    seconds: float = 0.0
    n_viol: int = 0
    n_samples: int = 0
    modified: bool = False


@dataclass
class FrontierResult:
    """Frontier points in sweep order (bounds loosening, minimisation form)."""

    problem: str
    sense: str
    seed: int
    config: dict
    points: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def nus(self):
        return np.array([p.nu for p in self.points])

    def alphas(self, which="upper"):
        key = "alpha_upper" if which == "upper" else "alpha_point"
        return np.array([getattr(p, key) for p in self.points])


def _start_point(problem, nu):
    prob = problem.at_level(nu)
    guess = problem.initial_guess
    y = np.zeros(problem.n) if guess is None else np.asarray(guess, dtype=float)
    return prob.project(y, nu)


def _scenario_feasible(problem, nu, scenarios, x, max_iter, relax):
    """Projected Polyak steps on ``h(x) = max_{l,j} g_j(x, xi_l)`` over ``X_nu``.

    Returns a point with ``h <= 0`` or ``None``. ``h`` is convex for every
    registered instance. Steps aim at a level well below zero (a tenth of the
    initial constraint scale), which reaches strict feasibility far sooner
    than aiming at zero itself.
    """
    prob = problem.at_level(nu)
    x = prob.project(x, nu)
    rows = np.arange(scenarios.shape[0])
    scale = None
    for _ in range(max_iter):
        g = prob.constraints(x, scenarios)
        flat = np.argmax(g.reshape(-1))
        l, j = divmod(flat, prob.m)
        h = g[l, j]
        if scale is None:
            scale = max(1.0, float(np.max(np.abs(g))))
        if h <= 0:
            return x
        grad = prob.gradient(x, scenarios[rows[l]:rows[l] + 1], np.array([j]))[0]
        gg = float(np.dot(grad, grad))
        if gg == 0:
            return None
        target = -0.1 * scale
        x_new = prob.project(x - relax * (h - target) / gg * grad, nu)
        # the step is absorbed by the projection: no progress is possible
        if np.linalg.norm(x_new - x) <= 1e-13 * (1.0 + np.linalg.norm(x)):
            return None
        x = x_new
    return None


def initialize_guess(problem, n_scenarios, rng, max_iter=2000, relax=1.5,
                     tol=1e-7, max_expand=20, scenarios=None):
    """Scenario-approximation starting point and objective bound.

    Bisects on the bound ``nu`` for the smallest level at which some
    ``x in X_nu`` satisfies all ``n_scenarios`` sampled constraints, each
    level being checked by a projected subgradient feasibility solve.

    The search stops once the bracket is narrower than ``tol`` times the
    initial bracket width. ``scenarios`` replaces the random draw.

    Returns
    -------
    x0 : array
        Scenario-feasible point at the final upper bracket.
    nu0 : float
        ``f(x0)`` in minimisation form.

    Raises
    ------
    InitializationError
        If no bound in the (expanded) bracket is scenario-feasible.
    """
    if n_scenarios < 1:
        raise ContractError("need at least one scenario")
    if scenarios is None:
        scenarios = problem.sample(rng, n_scenarios)
    scenarios = np.asarray(scenarios, dtype=float).reshape(-1, problem.d)
    lo, hi = problem.nu_bracket()
    stop = tol * max(1.0, hi - lo)

    def attempt(nu, x):
        try:
            start = _start_point(problem, nu) if x is None else x
        except InfeasibleError:
            return None
        return _scenario_feasible(problem, nu, scenarios, start, max_iter, relax)

    x_hi = attempt(hi, None)
    width = hi - lo
    expansions = 0
    while x_hi is None:
        expansions += 1
        if expansions > max_expand:
            raise InitializationError(
                "no scenario-feasible level found",
                diagnostics={"bracket": [lo, hi], "n_scenarios": n_scenarios})
        lo, hi = hi, hi + width * 2.0**expansions
        x_hi = attempt(hi, None)

    x_lo = attempt(lo, x_hi)
    if x_lo is not None:
        x_hi, hi = x_lo, lo
    else:
        while hi - lo > stop:
            mid = 0.5 * (lo + hi)
            x_mid = attempt(mid, x_hi)
            if x_mid is None:
                lo = mid
            else:
                hi, x_hi = mid, x_mid
    return x_hi, float(problem.at_level(hi).objective(x_hi))


def _spacing(nu0, config):
    return config.nu_frac * abs(nu0) if nu0 != 0 else config.nu_spacing


def _samples(problem, config, seed, replicate):
    cert = problem.sample(streams.generator(seed, 1, replicate, 0), config.N_MC)
    cert = np.atleast_2d(cert)
    return cert[:in_run_sample_size(config.alpha_low, config.N_MC)], cert


def _preprocess(problem, nu, x, base, config, rng):
    prob = problem.at_level(nu)
    schedule = scale_schedule(prob, x, base, config.N_scale, config.s_tol,
                              config.omega, rng, kind=config.smoothing)
    return estimate_initial_step(problem, nu, x, schedule, config, rng)


def trace_frontier(problem, config=None, seed=0, replicate=0, on_point=None,
                   init=None):
    """Approximate the efficient frontier by a loosening sweep of bounds.

    The bound starts at the initializer's level ``nu0`` and grows by
    ``nu_frac * |nu0|`` per point (``nu_spacing`` when ``nu0 == 0``); each
    point warm-starts from the projection of the previous solution. The sweep
    stops once a point's certified risk is at most ``alpha_low`` (or after
    ``max_points`` points).

    ``init`` overrides the initializer with a given ``(x0, nu0)``.
    Initializer randomness is shared by all replicates of a seed so their
    bounds line up; everything else uses the replicate's streams.
    ``on_point(result)`` runs after every completed point.
    """
    config = config or RunConfig()
    if init is None:
        init = initialize_guess(problem, config.N_1, streams.generator(seed, 0))
    x0, nu0 = np.asarray(init[0], dtype=float), float(init[1])
    result = FrontierResult(problem=problem.name, sense=problem.sense,
                            seed=seed, config=config.to_dict(),
                            meta={"replicate": replicate, "nu0": nu0})
    base = base_sequence(config.K, config.tau_c)
    run_sample, cert = _samples(problem, config, seed, replicate)
    x = problem.at_level(nu0).project(x0, nu0)
    steps = _preprocess(problem, nu0, x, base, config,
                        streams.generator(seed, 1, replicate, 1))
    result.meta.update(rho=steps.rho, sigma2=steps.sigma2,
                       step_floored=steps.floored,
                       initial_steps=steps.steps.tolist())
    spacing = _spacing(nu0, config)
    for i in range(1, config.max_points + 1):
        nu = nu0 + (i - 1) * spacing
        tic = time.perf_counter()
        x = problem.at_level(nu).project(x, nu)
        log = []
        sol = solve_frontier_point(problem, nu, x, base, steps.steps, config,
                                   streams.child(seed, 1, replicate, 2, i),
                                   run_sample, cert, log=log)
        x = sol.x
        result.points.append(FrontierPoint(
            index=i, nu=nu, x=sol.x, alpha_point=sol.risk.point,
            alpha_upper=sol.risk.upper, seconds=time.perf_counter() - tic,
            n_viol=sol.risk.n_viol, n_samples=sol.risk.n_samples))
        result.diagnostics.extend(dict(point=i, **row) for row in log)
        if on_point is not None:
            on_point(result)
        if sol.risk.upper <= config.alpha_low:
            break
    return result


@dataclass
class BisectionResult:
    nu: float
    nu_low: float
    nu_up: float
    solves: int
    history: list = field(default_factory=list)
    x: np.ndarray = None


def solve_fixed_risk(problem, target, nu_low, nu_up, nu_tol, config=None,
                     seed=0, replicate=0, init=None):
    """Bisect on the bound for the smallest level meeting risk ``target``.

    Each midpoint is solved like a frontier point, stopping early once the
    incumbent's in-run bound drops below ``target``; the bracket moves on the
    certified bound of the returned point. Returns ``nu_up`` at termination.
    """
    config = config or RunConfig()
    if not (math.isfinite(nu_low) and math.isfinite(nu_up)) or nu_low > nu_up:
        raise ContractError(f"invalid bracket [{nu_low}, {nu_up}]")
    if not nu_tol > 0:
        raise ContractError("nu_tol must be positive")
    if not 0 < target < 1:
        raise ContractError("target risk must lie in (0, 1)")
    out = BisectionResult(nu=nu_up, nu_low=nu_low, nu_up=nu_up, solves=0)
    if nu_low >= nu_up - nu_tol:
        return out
    if init is None:
        init = initialize_guess(problem, config.N_1, streams.generator(seed, 0))
    x0 = np.asarray(init[0], dtype=float)
    base = base_sequence(config.K, config.tau_c)
    run_sample, cert = _samples(problem, config, seed, replicate)
    steps = None
    lo, up = nu_low, nu_up
    while lo < up - nu_tol:
        nu = 0.5 * (lo + up)
        out.solves += 1
        try:
            x = problem.at_level(nu).project(x0, nu)
        except InfeasibleError:
            out.history.append({"nu": nu, "alpha_upper": 1.0, "infeasible": True})
            lo = nu
            continue
        if steps is None:
            steps = _preprocess(problem, nu, x, base, config,
                                streams.generator(seed, 1, replicate, 1))
        sol = solve_frontier_point(problem, nu, x, base, steps.steps, config,
                                   streams.child(seed, 1, replicate, 2, out.solves),
                                   run_sample, cert, target_risk=target)
        out.history.append({"nu": nu, "alpha_point": sol.risk.point,
                            "alpha_upper": sol.risk.upper,
                            "early_exit": sol.early_exit})
        if sol.risk.upper >= target:
            lo = nu
        else:
            up, out.x = nu, sol.x
    out.nu, out.nu_low, out.nu_up = up, lo, up
    return out


def monotone_envelope(result):
    """Running-minimum envelope of the certified risk along the sweep.

    A solution found at a tighter bound is feasible at every looser one, so
    each point takes the smallest risk (and its solution) among all points
    with bound at most its own. Replaced points are flagged ``modified``.
    """
    if not result.points:
        raise ContractError("empty frontier")
    order = sorted(range(len(result.points)), key=lambda i: result.points[i].nu)
    new = list(result.points)
    best = None
    for i in order:
        p = result.points[i]
        if best is None or p.alpha_upper <= best.alpha_upper:
            best = p
            new[i] = replace(p)
        else:
            new[i] = replace(p, x=best.x, alpha_point=best.alpha_point,
                             alpha_upper=best.alpha_upper, n_viol=best.n_viol,
                             n_samples=best.n_samples, modified=True)
    return replace(result, points=new)
