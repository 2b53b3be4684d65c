"""Chance-constrained problem instances.

Every instance is posed in minimisation form::

    min_{x in X} f(x)   s.t.   P{ g(x, xi) <= 0 } >= 1 - alpha

and exposes the pieces the solver needs: ``constraints`` (the ``m`` rows of
``g``), ``gradient`` (one row of the Jacobian in ``x``), a scenario sampler,
the Euclidean projection onto the level set ``X_nu = {x in X : f(x) <= nu}``
and, where known, the exact violation probability.

Batched evaluation is the norm: scenario arrays have shape ``(..., d)`` and
constraint values come back as ``(..., m)``.

Problems posed natively as maximisation (``sense == "max"``) are negated;
:meth:`Problem.to_native` maps a bound back for reporting.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, stats
from scipy.special import ndtr

from .errors import ContractError, InfeasibleError, UnsupportedCapability
from .projections import (min_variance_on_simplex, project_box_halfspace,
                          project_simplex, project_simplex_variance)


class Problem:
    """Interface shared by all instances."""

    name = "abstract"
    sense = "min"
    n: int
    d: int
    m: int
    initial_guess = None

    def objective(self, x):
        raise NotImplementedError

    def constraints(self, x, xi):
        raise NotImplementedError

    def gradient(self, x, xi, j):
        """Gradient of row ``j`` of ``g`` in ``x``.

        ``xi`` may be batched as ``(B, d)`` with ``j`` an int or a length-B
        index array; the result then has shape ``(B, n)``.
        """
        raise NotImplementedError

    def sample(self, rng, size=None):
        raise NotImplementedError

    def project(self, y, nu):
        raise NotImplementedError

    def set_residual(self, x):
        """Distance-like violation of ``x in X`` (0 when inside)."""
        raise NotImplementedError

    def level_residual(self, x, nu):
        return max(self.set_residual(x), self.objective(x) - nu, 0.0)

    def exact_risk(self, x):
        raise UnsupportedCapability(f"{self.name} has no exact risk oracle")

    @property
    def has_exact_risk(self):
        return False

    def at_level(self, nu):
        """The instance to use when the objective bound is ``nu``."""
        return self

    def nu_bracket(self):
        """Bounds ``(lo, hi)`` on interesting objective levels."""
        raise NotImplementedError

    def to_native(self, nu):
        return -nu if self.sense == "max" else nu

    def from_native(self, value):
        return -value if self.sense == "max" else value

    def params(self):
        return {}


def _as_batch(xi, d):
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != d:
        raise ContractError(f"scenario dimension {xi.shape[-1]} != {d}")
    return xi


@dataclass
class Toy1D(Problem):
    """``min x`` over ``[0, 10]`` with ``g = xi - x`` and ``xi ~ N(0, 1)``."""

    lo: float = 0.0
    hi: float = 10.0

    name = "toy1d"
    n = 1
    d = 1
    m = 1

    def objective(self, x):
        return float(x[0])

    def constraints(self, x, xi):
        xi = _as_batch(xi, 1)
        return xi - x[0]

    def gradient(self, x, xi, j):
        xi = np.asarray(xi, dtype=float)
        return -np.ones(xi.shape[:-1] + (1,))

    def sample(self, rng, size=None):
        shape = (1,) if size is None else (size, 1)
        return rng.standard_normal(shape)

    def project(self, y, nu):
        # X_nu is the interval [lo, min(hi, nu)]
        if nu < self.lo:
            raise InfeasibleError(f"bound {nu!r} below {self.lo!r}")
        return np.clip(np.asarray(y, dtype=float), self.lo, min(self.hi, nu))

    def set_residual(self, x):
        return float(max(self.lo - x[0], x[0] - self.hi, 0.0))

    def exact_risk(self, x):
        return float(ndtr(-x[0]))

    @property
    def has_exact_risk(self):
        return True

    def nu_bracket(self):
        return self.lo, self.hi

    def params(self):
        return {"lo": self.lo, "hi": self.hi}


@dataclass
class _Portfolio(Problem):
    N: int = 20

    def __post_init__(self):
        if self.N < 2:
            raise ContractError("portfolio needs at least two stocks")
        i = np.arange(1, self.N + 1)
        frac = (self.N - i) / (self.N - 1)
        self.mu = 1.05 + 0.3 * frac
        self.sigma = (0.05 + 0.6 * frac) / 3.0
        self.s2 = self.sigma**2

    @property
    def n(self):
        return self.N

    @property
    def d(self):
        return self.N

    m = 1

    def sample(self, rng, size=None):
        shape = (self.N,) if size is None else (size, self.N)
        return self.mu + self.sigma * rng.standard_normal(shape)

    def _threshold(self):
        raise NotImplementedError

    def constraints(self, x, xi):
        xi = _as_batch(xi, self.N)
        return (self._threshold() - xi @ x)[..., None]

    def gradient(self, x, xi, j):
        return -np.asarray(xi, dtype=float)

    def set_residual(self, x):
        return float(max(abs(x.sum() - 1.0), -x.min(), 0.0))

    def exact_risk(self, x):
        # xi @ x ~ N(mu @ x, x' Sigma x)
        sd = math.sqrt(float(np.dot(self.s2, x * x)))
        return float(ndtr((self._threshold() - self.mu @ x) / sd))

    @property
    def has_exact_risk(self):
        return True


@dataclass
class PortfolioReturn(_Portfolio):
    """Maximise the return threshold ``t`` with ``P{xi @ x >= t} >= 1 - alpha``.

    ``t`` is not a decision variable: at objective bound ``nu`` (minimisation
    form, ``nu = -t``) it is pinned to ``t = -nu``, so ``X_nu`` is the whole
    simplex. Use :meth:`at_level` to bind it.
    """

    t: float | None = None

    name = "portfolio-return"
    sense = "max"

    def _threshold(self):
        if self.t is None:
            raise ContractError("return threshold unset; call at_level(nu)")
        return self.t

    def objective(self, x):
        return -self._threshold()

    def at_level(self, nu):
        return replace(self, t=-float(nu))

    def project(self, y, nu):
        return project_simplex(y)

    def level_residual(self, x, nu):
        # the pinned threshold always meets the bound
        return self.set_residual(x)

    def nu_bracket(self):
        spread = 8.0 * self.sigma.max()
        return -(self.mu.max() + spread), -(self.mu.min() - spread)

    def params(self):
        return {"N": self.N}


@dataclass
class PortfolioVariance(_Portfolio):
    """Minimise ``x' Sigma x`` over the simplex with ``P{xi @ x >= t_bar} >= 1 - alpha``."""

    t_bar: float = 1.2

    name = "portfolio-variance"

    def _threshold(self):
        return self.t_bar

    def objective(self, x):
        return float(np.dot(self.s2, x * x))

    def project(self, y, nu):
        return project_simplex_variance(y, self.s2, nu)

    def nu_bracket(self):
        return min_variance_on_simplex(self.s2)[1], float(self.s2.max())

    def params(self):
        return {"N": self.N, "t_bar": self.t_bar}


def _ruben_cdf(q, w, tol=1e-14, max_terms=20000):
    """Ruben's chi-square series for ``P{sum_i w_i Z_i**2 <= q}``.

    Returns ``None`` when the series has not converged within ``max_terms``.
    """
    w = np.sort(w)
    beta = w[0]
    a = 1.0 - beta / w
    c = np.empty(max_terms + 1)
    g = np.empty(max_terms + 1)
    c[0] = math.exp(0.5 * np.sum(np.log(beta / w)))
    apow = np.ones_like(w)
    mass = c[0]
    k = 0
    while 1.0 - mass > tol:
        k += 1
        if k > max_terms:
            return None
        apow = apow * a
        g[k] = apow.sum()
        c[k] = np.dot(g[k:0:-1], c[:k]) / (2 * k)
        mass += c[k]
    dof = w.size + 2 * np.arange(k + 1)
    return float(np.dot(c[:k + 1], stats.chi2.cdf(q / beta, dof)))


def _imhof_sf(q, w):
    def integrand(u):
        theta = 0.5 * np.sum(np.arctan(w * u)) - 0.5 * q * u
        rho = np.prod((1.0 + (w * u) ** 2) ** 0.25)
        return math.sin(theta) / (u * rho)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(integrand, 0.0, np.inf, limit=5000,
                                epsabs=1e-13)
    return 0.5 + val / math.pi


def chi2_mixture_sf(q, weights):
    """``P{sum_i w_i Z_i**2 > q}`` for i.i.d. standard normal ``Z_i``.

    Equal weights reduce to a chi-square tail. Otherwise Ruben's mixture
    series is summed; Imhof's inversion integral covers weight spreads the
    series cannot reach within its term budget.
    """
    w = np.asarray(weights, dtype=float)
    w = w[w > 1e-12 * max(w.max(initial=0.0), 1e-300)]
    if w.size == 0:
        return 0.0 if q >= 0 else 1.0
    if np.ptp(w) <= 1e-12 * w.max():
        return float(stats.chi2.sf(q / w.max(), w.size))
    scale = w.max()
    cdf = _ruben_cdf(q / scale, w / scale)
    sf = 1.0 - cdf if cdf is not None else _imhof_sf(q / scale, w / scale)
    return float(min(1.0, max(0.0, sf)))


@dataclass
class NormOpt(Problem):
    """Joint norm constraints ``sum_i xi_ij**2 x_i**2 <= U**2`` for ``j = 1..m``.

    Posed as ``max sum(x)`` over ``x >= 0``; the box ``x <= U`` compactifies
    ``X_nu``. Scenarios are the ``n x m`` matrix flattened row-major.

    ``correlated=True``: column ``j`` has mean ``j/d`` (``d = n*m``), unit
    variance and pairwise covariance 0.5, drawn from a shared factor.
    ``correlated=False``: all entries i.i.d. standard normal.
    """

    n: int = 5
    m: int = 5
    U: float = 10.0
    correlated: bool = True
    upper: float | None = None
    means: np.ndarray = field(init=False, repr=False)

    sense = "max"

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.U <= 0:
            raise ContractError("invalid norm-optimization dimensions")
        if self.upper is None:
            self.upper = float(self.U)
        j = np.arange(1, self.m + 1)
        self.means = j / self.d if self.correlated else np.zeros(self.m)

    @property
    def name(self):
        return "normopt-corr" if self.correlated else "normopt-iid"

    @property
    def d(self):
        return self.n * self.m

    def _mat(self, xi):
        xi = _as_batch(xi, self.d)
        return xi.reshape(xi.shape[:-1] + (self.n, self.m))

    def objective(self, x):
        return -float(np.sum(x))

    def constraints(self, x, xi):
        z = self._mat(xi)
        return np.einsum("...ij,i->...j", z * z, x * x) - self.U**2

    def gradient(self, x, xi, j):
        z = self._mat(xi)
        if np.ndim(j) == 0:
            col = z[..., :, j]
        else:
            col = np.take_along_axis(z, np.asarray(j)[:, None, None], axis=-1)[..., 0]
        return 2.0 * x * col * col

    def sample(self, rng, size=None):
        b = 1 if size is None else size
        if self.correlated:
            common = rng.standard_normal((b, 1, self.m))
            own = rng.standard_normal((b, self.n, self.m))
            z = self.means + math.sqrt(0.5) * (common + own)
        else:
            z = rng.standard_normal((b, self.n, self.m))
        z = z.reshape(b, self.d)
        return z[0] if size is None else z

    def project(self, y, nu):
        return project_box_halfspace(y, 0.0, self.upper, -1.0, nu)

    def set_residual(self, x):
        return float(max(-x.min(), x.max() - self.upper, 0.0))

    @property
    def has_exact_risk(self):
        return not self.correlated

    def exact_risk(self, x):
        if self.correlated:
            raise UnsupportedCapability("no exact risk for correlated norm-opt")
        # rows are i.i.d. weighted chi-square sums
        row_sf = chi2_mixture_sf(self.U**2, np.asarray(x, dtype=float) ** 2)
        if row_sf >= 1.0:
            return 1.0
        return float(-math.expm1(self.m * math.log1p(-row_sf)))

    def symmetric_risk(self, c):
        """Exact risk at ``x = c * ones`` (i.i.d. case)."""
        if c == 0:
            return 0.0
        cdf = stats.chi2.cdf(self.U**2 / c**2, self.n)
        return float(-math.expm1(self.m * math.log(cdf))) if cdf > 0 else 1.0

    def nu_bracket(self):
        return -self.n * self.upper, 0.0

    def params(self):
        return {"n": self.n, "m": self.m, "U": self.U, "upper": self.upper}


REGISTRY = {
    "toy1d": Toy1D,
    "portfolio-return": PortfolioReturn,
    "portfolio-variance": PortfolioVariance,
    "normopt-corr": lambda **kw: NormOpt(correlated=True, **kw),
    "normopt-iid": lambda **kw: NormOpt(correlated=False, **kw),
}


def make_problem(name, **params):
    """Instantiate a registered problem by name."""
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ContractError(f"unknown problem {name!r}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ContractError(f"bad parameters for {name}: {exc}") from None


def _check_x(problem, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n,):
        raise ContractError(f"decision vector shape {x.shape} != ({problem.n},)")
    if not np.all(np.isfinite(x)):
        raise ContractError("non-finite decision vector")
    return x


def evaluate_constraints(problem, x, xi):
    """``g(x, xi)`` for one scenario, with dimension checks."""
    x = _check_x(problem, x)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (problem.d,):
        raise ContractError(f"scenario shape {xi.shape} != ({problem.d},)")
    return np.asarray(problem.constraints(x, xi), dtype=float).reshape(problem.m)


def exact_risk(problem, x):
    return problem.exact_risk(_check_x(problem, x))


def sample_scenario(problem, rng):
    return problem.sample(rng)
