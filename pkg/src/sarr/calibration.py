"""Turn privacy and error targets into a concrete mechanism configuration.

Given ``k``, ``p`` is set so that the majority vote is exactly eps-DP, then
``alpha0`` is set so that the vote has type I error exactly ``alpha``. The
minimum-k heuristic scans ``k = 0, 1, ...`` for the first ``k`` where both
solves succeed with ``alpha0 >= alpha0_min``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .binom_core import binom_tail_inverse
from .errors import CappedSearchError, DomainError, InfeasibleError
from .mechanism import MechanismConfig, epsilon_of, rejection_prob

EPS_TOL = 1e-10
MAX_BISECT = 200
DEFAULT_K_CAP = 200

#: Grids used throughout the published studies.
STANDARD_ALPHAS = (0.005, 0.01, 0.05, 0.1)
STANDARD_EPSILONS = (0.5, 0.75, 1.0, 1.25, 1.5)


@dataclass(frozen=True)
class CalibrationTarget:
    epsilon: float
    alpha: float
    alpha0_min: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.alpha0_min < 1.0:
            raise DomainError(f"alpha0_min must be below 1, got {self.alpha0_min}")


@dataclass(frozen=True)
class PowerCurve:
    """Rejection probability over a grid of subset powers or effect sizes."""

    points: tuple
    config: MechanismConfig
    abscissa: str = "gamma0"

    @property
    def x(self) -> np.ndarray:
        return np.array([pt[0] for pt in self.points])

    @property
    def power(self) -> np.ndarray:
        return np.array([pt[1] for pt in self.points])


def solve_p(k: int, epsilon: float) -> float:
    """Randomized response probability making the k-vote exactly eps-DP.

    The privacy level is strictly increasing in ``p``, tends to 0 as
    ``p -> 1/2`` and diverges as ``p -> 1``, so plain bisection suffices.
    """
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    lo, hi = 0.5, 1.0
    best, best_gap = None, math.inf
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        gap = epsilon_of(k, k, mid) - epsilon
        if abs(gap) < best_gap:
            best, best_gap = mid, abs(gap)
        if abs(gap) <= EPS_TOL:
            break
        if gap < 0:
            lo = mid
        else:
            hi = mid
    if best_gap > EPS_TOL:
        raise DomainError(f"epsilon={epsilon} is not representable at k={k} in binary64")
    return best


def solve_alpha0(k: int, p: float, alpha: float) -> float:
    """Subset level ``alpha0`` giving the vote type I error exactly ``alpha``.

    Raises:
        InfeasibleError: ``alpha`` lies below the floor reachable at this
            ``(k, p)`` (increase ``k`` or epsilon), or above the ceiling
            reached when every subset rejects.
    """
    n = 2 * k + 1
    q_star = binom_tail_inverse(n, k, alpha)
    if q_star < 1 - p:
        raise InfeasibleError(
            f"alpha={alpha} is below the minimum type I error at k={k}, p={p:.6g}; "
            "increase k or epsilon"
        )
    alpha0 = (q_star - (1 - p)) / (2 * p - 1)
    if alpha0 >= 1.0:
        raise InfeasibleError(f"alpha={alpha} needs alpha0 >= 1 at k={k}, p={p:.6g}")
    return alpha0


def calibrate(target: CalibrationTarget, k: Optional[int] = None) -> MechanismConfig:
    """Full configuration at a given ``k``, or via :func:`min_k` when ``k`` is None.

    An explicit ``k`` ignores ``alpha0_min`` apart from the feasibility of
    the solves themselves.
    """
    if k is None:
        return min_k(target)[1]
    p = solve_p(k, target.epsilon)
    alpha0 = solve_alpha0(k, p, target.alpha)
    return MechanismConfig(k=k, p=p, c=k, alpha0=alpha0)


def min_k(target: CalibrationTarget, cap: int = DEFAULT_K_CAP) -> tuple[int, MechanismConfig]:
    """Smallest ``k`` admitting exact eps and alpha with ``alpha0 >= alpha0_min``."""
    for k in range(cap + 1):
        p = solve_p(k, target.epsilon)
        try:
            alpha0 = solve_alpha0(k, p, target.alpha)
        except InfeasibleError:
            continue
        if alpha0 >= target.alpha0_min:
            return k, MechanismConfig(k=k, p=p, c=k, alpha0=alpha0)
    raise CappedSearchError(
        f"no k <= {cap} reaches epsilon={target.epsilon}, alpha={target.alpha} "
        f"with alpha0 >= {target.alpha0_min}"
    )


def table_min_k(
    alphas: Sequence[float] = STANDARD_ALPHAS,
    epsilons: Sequence[float] = STANDARD_EPSILONS,
    alpha0_min: float = 0.0,
    cap: int = DEFAULT_K_CAP,
) -> np.ndarray:
    """Matrix of minimum ``k`` with rows indexed by alpha and columns by epsilon."""
    if len(alphas) == 0 or len(epsilons) == 0:
        raise DomainError("alpha and epsilon grids must be nonempty")
    out = np.empty((len(alphas), len(epsilons)), dtype=int)
    for r, a in enumerate(alphas):
        for c, e in enumerate(epsilons):
            out[r, c] = min_k(CalibrationTarget(e, a, alpha0_min), cap=cap)[0]
    return out


def power_curve(
    k: int,
    target: CalibrationTarget,
    gamma0_grid: Optional[Sequence[float]] = None,
    *,
    effects: Optional[Sequence[float]] = None,
    b: Optional[int] = None,
) -> PowerCurve:
    """Calibrate at ``k`` and evaluate the vote's rejection probability.

    Pass either ``gamma0_grid`` (subset rejection probabilities) or
    ``effects`` together with the subset size ``b``; in the latter case the
    subset power comes from the two-sided z-test at level ``alpha0``.
    """
    config = calibrate(target, k)
    if effects is not None:
        if b is None:
            raise DomainError("an effect-size grid needs the subset size b")
        from .base_tests import z_power

        xs = [float(e) for e in effects]
        gammas = [z_power(e, b, config.alpha0) for e in xs]
        abscissa = "effect"
    elif gamma0_grid is not None:
        xs = [float(g) for g in gamma0_grid]
        gammas = xs
        abscissa = "gamma0"
    else:
        raise DomainError("need gamma0_grid or effects")
    points = tuple((x, rejection_prob(g, k, config.p)) for x, g in zip(xs, gammas))
    return PowerCurve(points=points, config=config, abscissa=abscissa)
