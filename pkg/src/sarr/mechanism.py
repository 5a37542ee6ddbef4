"""Randomized response, the majority-vote statistic and its exact properties.

Each of ``2k + 1`` disjoint subsets contributes one binary test outcome. The
outcomes go through independent randomized responses and the mechanism
reports ``d_c = 1(T > c)`` where ``T`` counts the reported rejections.
Everything here is an exact finite computation on binomial convolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from scipy.special import expit

from .binom_core import BinConvDist, binom_logsf, conv_cdf, conv_tail
from .errors import DomainError, InfeasibleError


def _check_p(p: float) -> float:
    if not 0.5 < p < 1.0:
        raise DomainError(f"randomized response probability must lie in (1/2, 1), got {p}")
    return float(p)


def _check_k(k: int) -> int:
    if not isinstance(k, (int, np.integer)) or k < 0:
        raise DomainError(f"k must be a nonnegative integer, got {k!r}")
    return int(k)


def _check_unit(name: str, value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value}")
    return float(value)


def as_generator(rng) -> tuple[np.random.Generator, Optional[int]]:
    """Turn a seed or generator into ``(generator, seed_or_None)``."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    if rng is None:
        raise DomainError("a random stream or integer seed is required")
    seed = int(rng)
    return np.random.default_rng(seed), seed


@dataclass(frozen=True)
class MechanismConfig:
    """Parameters ``(k, p, c, alpha0)`` of one vote mechanism."""

    k: int
    p: float
    c: Optional[int] = None
    alpha0: float = 0.0

    def __post_init__(self):
        _check_k(self.k)
        _check_p(self.p)
        if self.c is None:
            object.__setattr__(self, "c", int(self.k))
        if not 0 <= self.c <= 2 * self.k:
            raise DomainError(f"threshold c={self.c} outside [0, {2 * self.k}]")
        if not 0.0 <= self.alpha0 < 1.0:
            raise DomainError(f"alpha0 must lie in [0, 1), got {self.alpha0}")

    @property
    def m(self) -> int:
        """Number of subsets, ``2k + 1``."""
        return 2 * self.k + 1

    @property
    def majority(self) -> bool:
        return self.c == self.k

    @property
    def epsilon(self) -> float:
        return epsilon_of(self.k, self.c, self.p)

    @property
    def alpha(self) -> float:
        """Type I error when every subset test has size ``alpha0``."""
        return rejection_prob(self.alpha0, self.k, self.p, c=self.c)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "m": self.m,
            "p": self.p,
            "c": self.c,
            "alpha0": self.alpha0,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "majority_threshold": self.majority,
        }


@dataclass(frozen=True)
class PrivateDecision:
    """A differentially private binary decision with its audit trail.

    ``vote_count`` is the realized number of reported rejections for the
    vote mechanism; ``statistic`` holds the noisy aggregate for Laplace
    mechanisms (and ``float(vote_count)`` otherwise).
    """

    d: int
    epsilon: float
    alpha: Optional[float]
    vote_count: Optional[int]
    config: Any
    seed: Optional[int]
    mechanism: str = "sarr"
    statistic: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        cfg = self.config
        record = {
            "mechanism": self.mechanism,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "k": getattr(cfg, "k", None),
            "p": getattr(cfg, "p", None),
            "alpha0": getattr(cfg, "alpha0", None),
            "decision": int(self.d),
            "seed": self.seed,
        }
        if self.vote_count is not None:
            record["vote_count"] = int(self.vote_count)
        if self.statistic is not None:
            record["statistic"] = float(self.statistic)
        if isinstance(cfg, MechanismConfig) and not cfg.majority:
            record["threshold"] = cfg.c
            record["nondefault_threshold"] = True
        record.update(self.meta)
        return record


def randomized_response(x: int, p: float, rng: np.random.Generator) -> int:
    """Report ``x`` with probability ``p`` and ``1 - x`` otherwise.

    Consumes exactly one uniform draw from ``rng``.
    """
    if x not in (0, 1):
        raise DomainError(f"x must be 0 or 1, got {x!r}")
    p = _check_p(p)
    return int(x) if rng.random() < p else 1 - int(x)


def epsilon_of(k: int, c: int, p: float) -> float:
    """Exact privacy level of ``1(T > c)`` over ``2k + 1`` subsets.

    ``eps = log P(B_1 > c*) - log P(B_0 > c*)`` with ``c* = max(c, 2k - c)``.
    """
    k = _check_k(k)
    p = _check_p(p)
    if not 0 <= c <= 2 * k:
        raise DomainError(f"threshold c={c} outside [0, {2 * k}]")
    c_star = max(c, 2 * k - c)
    n = 2 * k + 1
    return conv_tail(BinConvDist(1, n, p), c_star) - conv_tail(BinConvDist(0, n, p), c_star)


def epsilon_limit(p: float) -> float:
    """Limit of the majority-vote privacy level as ``k`` grows."""
    p = _check_p(p)
    return math.log1p((2 * p - 1) ** 2 / (2 * p * (1 - p)))


def p_bounds(epsilon: float) -> tuple[float, float]:
    """Return ``(p_sufficient, p_necessary)`` for the majority vote to be eps-DP.

    Any ``p <= p_sufficient`` works for every ``k``; no ``k`` works once
    ``p > p_necessary``.
    """
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    p_suff = float(expit(epsilon))
    # sqrt(e^{2e} - 1) / (1 + e^e), rewritten to stay finite for large epsilon
    ratio = math.sqrt(-math.expm1(-2 * epsilon)) / (1 + math.exp(-epsilon))
    p_nec = 0.5 * (1 + ratio)
    return p_suff, p_nec


def disagreement_prob(s: int, k: int, p: float) -> float:
    """Probability that the private vote differs from the noiseless majority.

    ``s`` is the number of subset rejections. Equals ``P(B_s > k)`` when
    ``s <= k`` and ``P(B_s <= k)`` otherwise.
    """
    k = _check_k(k)
    p = _check_p(p)
    n = 2 * k + 1
    if not 0 <= s <= n:
        raise DomainError(f"s={s} outside [0, {n}]")
    dist = BinConvDist(s, n, p)
    if s <= k:
        return math.exp(conv_tail(dist, k))
    return math.exp(conv_cdf(dist, k))


def rejection_prob(gamma0: float, k: int, p: float, c: Optional[int] = None) -> float:
    """``P(T > c)`` when each subset test rejects with probability ``gamma0``.

    ``T ~ Binomial(2k + 1, p*gamma0 + (1 - p)*(1 - gamma0))``. With
    ``gamma0 = alpha0`` this is the type I error, otherwise the power.
    """
    gamma0 = _check_unit("gamma0", gamma0)
    k = _check_k(k)
    p = _check_p(p)
    c = k if c is None else int(c)
    q = p * gamma0 + (1 - p) * (1 - gamma0)
    q = min(max(q, 0.0), 1.0)
    return math.exp(binom_logsf(2 * k + 1, q, c))


def gate_probability(epsilon: float, alpha0: float, alpha: float) -> float:
    """Bernoulli gate ``rho`` giving the k = 0 gated response type I error ``alpha``."""
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    alpha0 = _check_unit("alpha0", alpha0)
    alpha = _check_unit("alpha", alpha)
    p = float(expit(epsilon))
    rho = alpha / (p * alpha0 + (1 - p) * (1 - alpha0))
    if rho > 1.0:
        raise InfeasibleError(
            f"gate probability {rho:.4g} > 1: alpha={alpha} is not reachable with "
            f"epsilon={epsilon}, alpha0={alpha0}"
        )
    return rho


def gated_rr_power(gamma0: float, epsilon: float, alpha0: float, alpha: float) -> float:
    """Rejection probability of ``B * r(x)`` with ``B ~ Bernoulli(rho)``."""
    gamma0 = _check_unit("gamma0", gamma0)
    rho = gate_probability(epsilon, alpha0, alpha)
    p = float(expit(epsilon))
    return rho * (p * gamma0 + (1 - p) * (1 - gamma0))


def min_alpha(k: int, epsilon: float) -> float:
    """Smallest type I error reachable at ``k`` with exact eps privacy (alpha0 = 0)."""
    from .calibration import solve_p

    p = solve_p(k, epsilon)
    return math.exp(binom_logsf(2 * k + 1, 1 - p, k))


def _respond(x: np.ndarray, u: np.ndarray, p: float) -> np.ndarray:
    # keep the true outcome when the uniform falls below p, flip it otherwise
    return np.where(u < p, x, 1 - x)


def sarr_votes(outcomes, p: float, c: Optional[int] = None, rng=None) -> np.ndarray:
    """Decisions for many replicates at once; ``outcomes`` has shape ``(reps, 2k + 1)``.

    Draws ``rng.random(outcomes.shape)``, which consumes the stream exactly as
    repeated :func:`sarr_vote` calls on the rows would.
    """
    x = np.asarray(outcomes)
    if x.ndim != 2 or x.shape[1] % 2 == 0:
        raise DomainError(f"need a (reps, 2k + 1) outcome array, got shape {x.shape}")
    if not np.isin(x, (0, 1)).all():
        raise DomainError("outcomes must be binary")
    p = _check_p(p)
    k = (x.shape[1] - 1) // 2
    c = k if c is None else c
    if not 0 <= c <= 2 * k:
        raise DomainError(f"threshold c must lie in [0, {2 * k}], got {c}")
    gen, _ = as_generator(rng)
    return (_respond(x, gen.random(x.shape), p).sum(axis=1) > c).astype(int)


def gated_rr_votes(outcomes, epsilon: float, alpha0: float, alpha: float, rng=None) -> np.ndarray:
    """Gated randomized response on a vector of full-data outcomes.

    Each replicate uses two uniforms, the response first and the gate second.
    """
    x = np.asarray(outcomes)
    if x.ndim != 1 or not np.isin(x, (0, 1)).all():
        raise DomainError("outcomes must be a binary vector")
    rho = gate_probability(epsilon, alpha0, alpha)
    gen, _ = as_generator(rng)
    u = gen.random((x.size, 2))
    return _respond(x, u[:, 0], float(expit(epsilon))) * (u[:, 1] < rho).astype(int)


def sarr_vote(
    outcomes: Sequence[int],
    p: float,
    c: Optional[int] = None,
    rng=None,
    *,
    alpha0: Optional[float] = None,
    alpha: Optional[float] = None,
) -> PrivateDecision:
    """Randomize each subset outcome, count reported rejections, threshold at ``c``.

    One uniform is drawn per outcome, in subset order, so the decision can be
    replayed from the seed, the outcomes and the configuration.
    """
    x = np.asarray(outcomes)
    if x.ndim != 1 or x.size == 0 or x.size % 2 == 0:
        raise DomainError(f"need an odd, nonempty list of outcomes, got length {x.size}")
    if not np.isin(x, (0, 1)).all():
        raise DomainError("outcomes must be binary")
    p = _check_p(p)
    k = (x.size - 1) // 2
    config = MechanismConfig(k=k, p=p, c=c, alpha0=alpha0 if alpha0 is not None else 0.0)
    gen, seed = as_generator(rng)
    t = int(_respond(x, gen.random(x.size), p).sum())
    if alpha is None and alpha0 is not None:
        alpha = config.alpha
    return PrivateDecision(
        d=int(t > config.c),
        epsilon=config.epsilon,
        alpha=alpha,
        vote_count=t,
        config=config,
        seed=seed,
        mechanism="sarr",
        statistic=float(t),
    )
