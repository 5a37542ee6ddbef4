"""Posterior probabilities of the alternative given a private decision.

The decision ``d`` has a known size ``alpha``; its behavior under the
alternative is integrated over a prior on the subset test's power. The
priors follow a mean / effective-sample-size beta parametrization and are
induced from a unit-information normal prior on the z-test effect size.

Integrals against beta priors use a Gauss rule whose weight function is the
beta density itself (Gauss-Jacobi), so polynomial integrands such as the vote
rejection probability are integrated exactly. Every quantity has a Monte
Carlo counterpart for cross-checking.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate, stats
from scipy.special import ndtr, roots_hermite, roots_jacobi

from .base_tests import _z_critical, z_power
from .binom_core import BinConvDist, conv_tail
from .calibration import solve_p
from .dp_testing import LaplaceMechanismConfig, laplace_noise_scale
from .errors import DomainError, UncalibratedError
from .mechanism import rejection_prob

BETA_ORDER = 128
HERMITE_ORDER = 64
#: Shape parameters above this use adaptive quadrature instead of Gauss-Jacobi.
JACOBI_SHAPE_MAX = 400.0
#: Shrinkage applied to the z-test proxies when building the study priors.
PRIOR_SHRINKAGE = 0.8
TABLE2_METHODS = ("truth", "sarr", "avg_p", "sum")


class QuadratureWarning(RuntimeWarning):
    """Adaptive quadrature could not reach its error tolerance."""


@dataclass(frozen=True)
class BetaMuKappa:
    """Beta distribution with mean ``mu`` and effective sample size ``kappa``."""

    mu: float
    kappa: float

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise DomainError(f"mu must lie in (0, 1), got {self.mu}")
        if not self.kappa > 0:
            raise DomainError(f"kappa must be positive, got {self.kappa}")

    @property
    def a(self) -> float:
        return self.mu * self.kappa

    @property
    def b(self) -> float:
        return (1 - self.mu) * self.kappa

    @property
    def dist(self):
        return stats.beta(self.a, self.b)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.beta(self.a, self.b, size)

    def describe(self) -> str:
        return f"Beta(mu={self.mu:.6g}, kappa={self.kappa:.6g})"


@dataclass(frozen=True)
class PosteriorReport:
    p_h1_given_d: float
    d: int
    prior_h1: float
    alpha: float
    p_d1_given_h1: float
    prior_spec: str = ""

    def to_dict(self) -> dict:
        return {
            "p_h1_given_d": self.p_h1_given_d,
            "d": self.d,
            "prior_h1": self.prior_h1,
            "alpha": self.alpha,
            "p_d1_given_h1": self.p_d1_given_h1,
            "prior_spec": self.prior_spec,
        }


def posterior_h1(d: int, prior_h1: float, alpha: float, p_d1_given_h1: float,
                 prior_spec: str = "") -> PosteriorReport:
    """Bayes' rule for ``P(H1 | d)`` when ``P(d = 1 | H0) = alpha``."""
    if d not in (0, 1):
        raise DomainError(f"d must be 0 or 1, got {d!r}")
    if not 0.0 < prior_h1 < 1.0:
        raise DomainError(f"prior_h1 must lie in (0, 1), got {prior_h1}")
    for name, v in (("alpha", alpha), ("p_d1_given_h1", p_d1_given_h1)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name} must lie in [0, 1], got {v}")
    prior_h0 = 1.0 - prior_h1
    if d == 1:
        num = prior_h1 * p_d1_given_h1
        den = prior_h0 * alpha + num
    else:
        num = prior_h1 * (1.0 - p_d1_given_h1)
        den = prior_h0 * (1.0 - alpha) + num
    post = num / den if den > 0 else prior_h1
    return PosteriorReport(post, d, prior_h1, alpha, p_d1_given_h1, prior_spec)


# ---------------------------------------------------------------------------
# Quadrature helpers

@lru_cache(maxsize=256)
def _jacobi_rule(order: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_jacobi(order, b - 1.0, a - 1.0)
    return (x + 1.0) / 2.0, w / w.sum()


def _beta_expectation_adaptive(f, a: float, b: float, breaks=()) -> float:
    dist = stats.beta(a, b)
    lo, hi = dist.ppf(1e-14), dist.isf(1e-14)
    points = sorted({a / (a + b), *(x for x in breaks if lo < x < hi)})
    val, err = integrate.quad(lambda g: f(np.array([g]))[0] * dist.pdf(g), lo, hi,
                              points=points, limit=400, epsabs=1e-11, epsrel=1e-11)
    if err > 1e-8:
        warnings.warn(f"adaptive beta quadrature error estimate {err:.2g}", QuadratureWarning, stacklevel=3)
    return float(val)


def beta_expectation(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                     order: int = BETA_ORDER) -> float:
    """``E[f(G)]`` for ``G ~ Beta(a, b)``; ``f`` must accept an array of points.

    Uses an ``order``-point Gauss-Jacobi rule and checks it against half the
    order; disagreement beyond 1e-10, or very large shapes, switches to
    adaptive quadrature, which emits :class:`QuadratureWarning` if it does
    not converge either.
    """
    if a <= 0 or b <= 0:
        raise DomainError("beta shapes must be positive")
    if max(a, b) <= JACOBI_SHAPE_MAX:
        g, w = _jacobi_rule(order, float(a), float(b))
        full = float(np.dot(w, f(g)))
        g2, w2 = _jacobi_rule(order // 2, float(a), float(b))
        half = float(np.dot(w2, f(g2)))
        if abs(full - half) <= 1e-10:
            return full
    return _beta_expectation_adaptive(f, a, b)


@lru_cache(maxsize=4)
def _hermite_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_hermite(order)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


def _hermite(f, order: int) -> float:
    z, w = _hermite_rule(order)
    return float(sum(wi * f(zi) for zi, wi in zip(z, w)))


def normal_expectation(f: Callable[[float], float], order: int = HERMITE_ORDER, breaks=()) -> float:
    """``E[f(Z)]`` for standard normal ``Z``.

    Gauss-Hermite of the given order, checked against 1.5 times the order.
    Integrands that change quickly (for example power curves at large
    sample sizes) fail the check and go to adaptive quadrature split at
    ``breaks``.
    """
    fixed = _hermite(f, order)
    if abs(fixed - _hermite(f, order + order // 2)) <= 1e-10:
        return fixed
    lim = 10.0
    points = sorted({0.0, *(x for x in breaks if -lim < x < lim)})
    edges = [-lim, *points, lim]
    total, err = 0.0, 0.0
    for lo, hi in zip(edges, edges[1:]):
        v, e = integrate.quad(lambda z: f(z) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi), lo, hi,
                              limit=200, epsabs=1e-12, epsrel=1e-11)
        total, err = total + v, err + e
    if err > 1e-8:
        warnings.warn(f"adaptive normal quadrature error estimate {err:.2g}", QuadratureWarning, stacklevel=2)
    return total


# ---------------------------------------------------------------------------
# Prior predictive quantities

def p_d1_given_h1(k: int, p: float, prior: BetaMuKappa) -> float:
    """``P(d = 1 | H1)``: vote rejection probability averaged over the power prior."""
    def f(gammas):
        return np.array([rejection_prob(float(min(max(g, 0.0), 1.0)), k, p) for g in gammas])

    return beta_expectation(f, prior.a, prior.b)


def p_d1_given_h1_exact(k: int, p: float, prior: BetaMuKappa) -> float:
    """Same quantity through the beta-binomial law of the subset rejection count.

    Given the subset power, the count ``S`` of subset rejections is binomial,
    so marginally it is beta-binomial; given ``S = s`` the vote rejects with
    probability ``P(B_s > k)``.
    """
    n = 2 * k + 1
    s = np.arange(n + 1)
    weights = stats.betabinom.pmf(s, n, prior.a, prior.b)
    tails = np.array([math.exp(conv_tail(BinConvDist(int(i), n, p), k)) for i in s])
    return float(np.dot(weights, tails))


def p_d1_given_h1_z(k: int, p: float, alpha0: float, b: int) -> float:
    """``P(d = 1 | H1)`` for z-test subsets of size ``b`` under a standard normal effect size.

    The subset power is ``z_power(delta, b, alpha0)`` and ``delta ~ N(0, 1)``,
    so the power prior is induced rather than specified directly.
    """
    if b < 1:
        raise DomainError(f"b must be at least 1, got {b}")
    edge = _z_critical(alpha0) / math.sqrt(b)
    return normal_expectation(lambda delta: rejection_prob(z_power(delta, b, alpha0), k, p),
                              breaks=(-edge, edge))


def unit_info_z_power(b: int, level: float) -> float:
    """Average two-sided z-test power when the effect size is standard normal."""
    if b < 1:
        raise DomainError(f"b must be at least 1, got {b}")
    edge = _z_critical(level) / math.sqrt(b)
    return normal_expectation(lambda delta: z_power(delta, b, level), breaks=(-edge, edge))


def _expected_pvalue_given_shift(shift: float) -> float:
    # E[2 Phi(-|shift + Z|)] with a breakpoint at the kink
    f = lambda z: 2.0 * ndtr(-abs(shift + z)) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    lo, hi = -40.0, 40.0
    kink = min(max(-shift, lo), hi)
    left = integrate.quad(f, lo, kink, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    right = integrate.quad(f, kink, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return left + right


def expected_pvalue_z(b: int) -> float:
    """Average two-sided z-test p-value under a standard normal effect size."""
    if b < 1:
        raise DomainError(f"b must be at least 1, got {b}")
    root_b = math.sqrt(b)
    return normal_expectation(lambda delta: _expected_pvalue_given_shift(root_b * delta),
                              breaks=(-1 / root_b, 1 / root_b))


# ---------------------------------------------------------------------------
# Study priors

def _require_critical(config: Optional[LaplaceMechanismConfig], kind: str) -> float:
    if config is None or config.critical_value is None:
        raise UncalibratedError(f"{kind} prior needs a calibrated critical value")
    if config.kind != kind:
        raise DomainError(f"expected a {kind} configuration, got {config.kind}")
    return float(config.critical_value)


def laplace_cdf(x):
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0)), 1 - 0.5 * np.exp(-np.maximum(x, 0)))


def table2_priors(
    method: str,
    k: int,
    b: int,
    alpha0: float,
    epsilon: float,
    laplace: Optional[LaplaceMechanismConfig] = None,
) -> float:
    """``P(d = 1 | H1)`` under the prior construction used for each mechanism.

    ``b`` is the number of observations entering each test and ``alpha0`` its
    level; for ``truth`` pass the full sample size and the target alpha (``k``
    is ignored). ``avg_p`` and ``sum`` need the calibrated Laplace
    configuration for their critical values.
    """
    if method not in TABLE2_METHODS:
        raise DomainError(f"method must be one of {TABLE2_METHODS}, got {method!r}")
    if method == "truth":
        return PRIOR_SHRINKAGE * unit_info_z_power(b, alpha0)
    kappa = 2 * k + 1
    if method == "sarr":
        prior = BetaMuKappa(PRIOR_SHRINKAGE * unit_info_z_power(b, alpha0), kappa)
        return p_d1_given_h1(k, solve_p(k, epsilon), prior)
    if method == "avg_p":
        crit = _require_critical(laplace, "avg_p")
        prior = BetaMuKappa(PRIOR_SHRINKAGE * expected_pvalue_z(b), kappa)
        scale = laplace_noise_scale("avg_p", k, epsilon)
        # the integrand has a kink at pbar = crit, so integrate adaptively across it
        return _beta_expectation_adaptive(lambda pbar: laplace_cdf((crit - pbar) / scale),
                                          prior.a, prior.b, breaks=(crit,))
    crit = _require_critical(laplace, "sum")
    prior = BetaMuKappa(PRIOR_SHRINKAGE * unit_info_z_power(b, alpha0), kappa)
    scale = laplace_noise_scale("sum", k, epsilon)
    n = 2 * k + 1
    s = np.arange(n + 1)
    exceed = 1.0 - laplace_cdf((crit - s) / scale)

    def f(gammas):
        pmf = stats.binom.pmf(s[None, :], n, np.clip(gammas, 0.0, 1.0)[:, None])
        return pmf @ exceed

    return beta_expectation(f, prior.a, prior.b)


def table2_priors_mc(
    method: str,
    k: int,
    b: int,
    alpha0: float,
    epsilon: float,
    laplace: Optional[LaplaceMechanismConfig] = None,
    draws: int = 1_000_000,
    rng=None,
) -> tuple[float, float]:
    """Monte Carlo estimate and standard error of :func:`table2_priors`.

    Simulates the prior predictive directly: effect sizes and z statistics
    for ``truth``; power, subset outcomes and responses for ``sarr``; beta
    mean p-values plus noise for ``avg_p``; beta-binomial counts plus noise
    for ``sum``.
    """
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if method == "truth":
        delta = gen.standard_normal(draws)
        z = gen.standard_normal(draws) + math.sqrt(b) * delta
        hits = np.abs(z) > _z_critical(alpha0)
        hits = hits & (gen.random(draws) < PRIOR_SHRINKAGE)
    elif method == "sarr":
        n = 2 * k + 1
        prior = BetaMuKappa(PRIOR_SHRINKAGE * unit_info_z_power(b, alpha0), 2 * k + 1)
        p = solve_p(k, epsilon)
        gamma = prior.sample(gen, draws)
        x = gen.random((draws, n)) < gamma[:, None]
        keep = gen.random((draws, n)) < p
        t = np.where(keep, x, ~x).sum(axis=1)
        hits = t > k
    elif method == "avg_p":
        crit = _require_critical(laplace, "avg_p")
        prior = BetaMuKappa(PRIOR_SHRINKAGE * expected_pvalue_z(b), 2 * k + 1)
        stat = prior.sample(gen, draws) + gen.laplace(0.0, laplace_noise_scale("avg_p", k, epsilon), draws)
        hits = stat < crit
    elif method == "sum":
        crit = _require_critical(laplace, "sum")
        prior = BetaMuKappa(PRIOR_SHRINKAGE * unit_info_z_power(b, alpha0), 2 * k + 1)
        s = gen.binomial(2 * k + 1, prior.sample(gen, draws))
        stat = s + gen.laplace(0.0, laplace_noise_scale("sum", k, epsilon), draws)
        hits = stat > crit
    else:
        raise DomainError(f"method must be one of {TABLE2_METHODS}, got {method!r}")
    est = float(hits.mean())
    return est, math.sqrt(max(est * (1 - est), 1e-300) / draws)
