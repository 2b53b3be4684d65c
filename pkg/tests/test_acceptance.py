"""End-to-end acceptance checks; each test records one pass/fail line."""

import json
import time

import numpy as np
import pytest
from scipy import stats
from scipy.special import ndtr

from ccfrontier import cli
from ccfrontier.problems import make_problem
from ccfrontier.projections import (min_variance_on_simplex, project_box_halfspace,
                                    project_simplex, project_simplex_variance)
from ccfrontier.risk import risk_upper_bound
from ccfrontier.smoothing import d2phi, dphi
from oracles import box_halfspace_kkt, portfolio_min_risk, simplex_kkt, simplex_variance_kkt

pytestmark = pytest.mark.slow

DESK = {"N_MC": 10_000, "alpha_low": 0.01}
CONFIGS = {
    "toy": {"problem": {"name": "toy1d"}, "seed": 42,
            "solver": dict(DESK, nu_frac=0.05)},
    "portfolio": {"problem": {"name": "portfolio-return", "params": {"N": 20}}, "seed": 3,
                  "replicates": 5,
                  "solver": dict(DESK, nu_frac=0.02, risk_estimator="exact")},
    "normopt": {"problem": {"name": "normopt-iid", "params": {"n": 5, "m": 5, "U": 10.0}},
                "seed": 5, "solver": dict(DESK, nu_frac=0.02, risk_estimator="exact")},
    "bisect": {"problem": {"name": "toy1d"}, "seed": 7, "mode": "bisect",
               "solver": {"N_MC": 100_000},
               "bisect": {"target": 0.1587, "nu_low": 0.0, "nu_up": 3.0, "nu_tol": 0.01}},
}


def _execute(name, out):
    doc = dict(CONFIGS[name], out=str(out))
    path = out.parent / f"{out.name}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))
    t0 = time.perf_counter()
    code = cli.main(["run", "--config", str(path)])
    return code, time.perf_counter() - t0


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    done = {}

    def get(name):
        if name not in done:
            out = base / "first" / name
            code, seconds = _execute(name, out)
            done[name] = (out, code, seconds)
        return done[name]

    get.base = base
    return get


def _points(directory):
    return [json.loads(p.read_text())
            for p in sorted(directory.glob("sol_*.json"),
                            key=lambda p: int(p.stem.split("_")[1]))]


def test_criterion_1_smoothing_bounds(record):
    t0 = time.perf_counter()
    worst1 = worst2 = -np.inf
    h = 1e-6
    for tau in (1.0, 0.1, 0.01):
        y = np.linspace(-40 * tau, 40 * tau, 100_000)
        worst1 = max(worst1, np.max(np.abs(dphi(y, tau))) - 0.25 / tau)
        fd = (dphi(y + h * tau, tau) - dphi(y - h * tau, tau)) / (2 * h * tau)
        worst2 = max(worst2, np.max(np.abs(fd)) - 0.1 / tau**2,
                     np.max(np.abs(d2phi(y, tau))) - 0.1 / tau**2)
    seconds = time.perf_counter() - t0
    ok = worst1 <= 1e-12 and worst2 <= 1e-9 and seconds < 5
    record(1, ok, f"excess |dphi| {worst1:.2e}, |d2phi| {worst2:.2e}, {seconds:.2f}s")
    assert ok


def test_criterion_2_projection_oracles(record):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    dev = {"simplex": 0.0, "variance": 0.0, "box": 0.0}
    for n in range(2, 7):
        for _ in range(200):
            y = rng.normal(scale=2.0, size=n)
            dev["simplex"] = max(dev["simplex"],
                                 np.max(np.abs(project_simplex(y) - simplex_kkt(y))))

            s2 = rng.uniform(0.1, 2.0, n)
            q_min = min_variance_on_simplex(s2)[1]
            x0 = simplex_kkt(y)
            nu = rng.uniform(q_min, max(np.dot(s2, x0 * x0), 1.01 * q_min))
            dev["variance"] = max(dev["variance"], np.max(np.abs(
                project_simplex_variance(y, s2, nu) - simplex_variance_kkt(y, s2, nu))))

            lo = rng.uniform(-1, 0, n)
            hi = lo + rng.uniform(0.1, 2.0, n)
            c = rng.normal(size=n)
            cmin = np.minimum(c * lo, c * hi).sum()
            cmax = np.maximum(c * lo, c * hi).sum()
            nu = cmin + rng.uniform() * (cmax - cmin)
            dev["box"] = max(dev["box"], np.max(np.abs(
                project_box_halfspace(y, lo, hi, c, nu) - box_halfspace_kkt(y, lo, hi, c, nu))))
    seconds = time.perf_counter() - t0
    ok = max(dev.values()) <= 1e-8 and seconds < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in dev.items())
    record(2, ok, f"max deviation {detail}, {seconds:.1f}s")
    assert ok


def test_criterion_3_risk_bound(record):
    t0 = time.perf_counter()
    cdf_err = 0.0
    for k, n, d in [(5, 100, 0.05), (157, 1000, 1e-6), (15870, 100_000, 1e-6),
                    (3, 100_000, 1e-6), (1, 10, 0.1)]:
        cdf_err = max(cdf_err, abs(stats.binom.cdf(k, n, risk_upper_bound(k, n, d)) - d))
    # zero violations: (1 - a)**n == delta in log space, to machine precision
    closed = max(abs(n * np.log1p(-risk_upper_bound(0, n, d)) / np.log(d) - 1)
                 for n, d in [(100, 0.05), (10_000, 1e-6), (1, 0.5), (10**6, 1e-9)])
    covered = {}
    for delta in (0.05, 1e-6):
        counts = np.random.default_rng(12345).binomial(1000, 0.05, size=500)
        covered[delta] = sum(risk_upper_bound(int(k), 1000, delta) > 0.05 for k in counts)
    cov_ok = all(covered[d] >= (1 - d) * 500 - 3 * np.sqrt(500 * d * (1 - d)) for d in covered)
    seconds = time.perf_counter() - t0
    ok = cdf_err <= 1e-8 and closed <= 4e-16 and cov_ok and seconds < 60
    record(3, ok, f"cdf residual {cdf_err:.1e}, closed form residual {closed:.1e}, "
                  f"coverage {covered[0.05]}/500 and {covered[1e-6]}/500, {seconds:.1f}s")
    assert ok


def test_criterion_4_toy_frontier(runs, record):
    out, code, seconds = runs("toy")
    pts = _points(out / "replicate_0")
    errs = [abs(ndtr(-p["x"][0]) - ndtr(-p["nu"])) for p in pts]
    ok = code == 0 and len(pts) > 0 and max(errs) <= 0.015 and seconds < 120
    record(4, ok, f"{len(pts)} points, max |risk - analytic| {max(errs, default=np.nan):.4f}, "
                  f"{seconds:.0f}s")
    assert ok


def test_criterion_5_portfolio(runs, record):
    out, code, seconds = runs("portfolio")
    prob = make_problem("portfolio-return", N=20)
    risks = {}
    for r in range(5):
        for p in _points(out / f"replicate_{r}"):
            risks.setdefault(p["nu_min_form"], []).append(
                prob.at_level(p["nu_min_form"]).exact_risk(np.array(p["x"])))
    worst_gap, worst_spread = 0.0, 0.0
    for nu, vals in risks.items():
        best = portfolio_min_risk(prob.mu, prob.sigma**2, -nu)
        worst_gap = max(worst_gap, max(vals) / best)
        worst_spread = max(worst_spread, max(vals) / min(vals))
    ok = code == 0 and risks and worst_gap <= 2 and worst_spread <= 2 and seconds < 600
    record(5, ok, f"{len(risks)} levels, worst risk/oracle {worst_gap:.3f}, "
                  f"worst replicate spread {worst_spread:.3f}, {seconds:.0f}s")
    assert ok


def test_criterion_6_normopt(runs, record):
    out, code, seconds = runs("normopt")
    prob = make_problem("normopt-iid", n=5, m=5, U=10.0)
    rel = []
    for p in _points(out / "replicate_0"):
        analytic = prob.symmetric_risk(abs(p["nu_min_form"]) / prob.n)
        rel.append(abs(prob.exact_risk(np.array(p["x"])) / analytic - 1))
    ok = code == 0 and rel and max(rel) <= 0.25 and seconds < 600
    record(6, ok, f"{len(rel)} points, worst relative error {max(rel, default=np.nan):.4f}, "
                  f"{seconds:.0f}s")
    assert ok


def test_criterion_7_bisection(runs, record):
    out, code, seconds = runs("bisect")
    doc = json.loads((out / "replicate_0" / "bisect.json").read_text())
    ok = code == 0 and abs(doc["nu"] - 1.0) <= 0.05 and seconds < 120
    record(7, ok, f"nu {doc['nu']:.4f} after {doc['solves']} solves, {seconds:.0f}s")
    assert ok


def _tree(directory):
    return {str(p.relative_to(directory)): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file() and p.name != "config.json"}


def test_criterion_8_determinism(runs, record):
    same = {}
    for name in CONFIGS:
        first, _, _ = runs(name)
        again = runs.base / "second" / name
        code, _ = _execute(name, again)
        same[name] = code == 0 and _tree(first) == _tree(again) and len(_tree(first)) > 0
    ok = all(same.values())
    record(8, ok, ", ".join(f"{k} {'identical' if v else 'differs'}" for k, v in same.items()))
    assert ok
