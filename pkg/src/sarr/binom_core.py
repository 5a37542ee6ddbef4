"""Log-space kernels for sums of two opposed binomials.

``BinConvDist(i, n, p)`` is the law of ``Binomial(i, p) + Binomial(n - i, 1 - p)``.
Privacy levels, disagreement probabilities and rejection probabilities of the
vote mechanism are all pmfs or tails of this family. Tails routinely fall
below 1e-15, so everything is kept as natural logs and combined with
log-sum-exp; ratios of tails are differences of logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from .errors import DomainError

LogProb = float

#: Largest trial count handled by the direct convolution.
MAX_TRIALS = 4096

_TAIL_TOL = 1e-12
_MAX_BISECT = 200


@dataclass(frozen=True)
class BinConvDist:
    """Binomial(i, p) + Binomial(n - i, 1 - p).

    In every mechanism use ``n = 2k + 1`` and ``1/2 < p < 1``; the kernels
    accept any ``0 < p < 1`` so that plain binomials (``i = n``) can share
    the same code.
    """

    i: int
    n: int
    p: float

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and isinstance(self.i, (int, np.integer))):
            raise DomainError("i and n must be integers")
        if self.n < 0 or not 0 <= self.i <= self.n:
            raise DomainError(f"need 0 <= i <= n, got i={self.i}, n={self.n}")
        if self.n > MAX_TRIALS:
            raise DomainError(f"n={self.n} exceeds the supported maximum {MAX_TRIALS}")
        if not 0.0 < self.p < 1.0:
            raise DomainError(f"p must lie in (0, 1), got {self.p}")

    def logpmf(self) -> np.ndarray:
        """Log pmf over the full support ``0..n`` (read-only array)."""
        return _conv_logpmf(int(self.i), int(self.n), float(self.p))

    def logsf(self) -> np.ndarray:
        """``out[x] = log P(B > x)`` for ``x = 0..n``."""
        return _conv_logsf(int(self.i), int(self.n), float(self.p))

    def logcdf(self) -> np.ndarray:
        """``out[x] = log P(B <= x)`` for ``x = 0..n``."""
        return _conv_logcdf(int(self.i), int(self.n), float(self.p))


def binom_logpmf(n: int, p: float) -> np.ndarray:
    """Log pmf of Binomial(n, p) over ``0..n``; handles p in {0, 1}."""
    x = np.arange(n + 1, dtype=float)
    logcomb = gammaln(n + 1.0) - gammaln(x + 1.0) - gammaln(n - x + 1.0)
    with np.errstate(divide="ignore"):
        return logcomb + xlogy(x, p) + xlog1py(n - x, -p)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _convolve_logpmf(i: int, n: int, p: float) -> np.ndarray:
    a = binom_logpmf(i, p)
    b = binom_logpmf(n - i, 1.0 - p)
    if a.size > b.size:
        a, b = b, a
    out = np.full(n + 1, -np.inf)
    width = b.size
    for j, aj in enumerate(a):
        if aj == -np.inf:
            continue
        seg = out[j:j + width]
        np.logaddexp(seg, aj + b, out=seg)
    return out


@lru_cache(maxsize=512)
def _conv_logpmf(i: int, n: int, p: float) -> np.ndarray:
    return _readonly(_convolve_logpmf(i, n, p))


@lru_cache(maxsize=512)
def _conv_logsf(i: int, n: int, p: float) -> np.ndarray:
    lp = _conv_logpmf(i, n, p)
    # suffix[x] = log P(B >= x)
    suffix = np.logaddexp.accumulate(lp[::-1])[::-1]
    out = np.empty(n + 1)
    out[:-1] = suffix[1:]
    out[-1] = -np.inf
    return _readonly(np.minimum(out, 0.0))


@lru_cache(maxsize=512)
def _conv_logcdf(i: int, n: int, p: float) -> np.ndarray:
    lp = _conv_logpmf(i, n, p)
    out = np.logaddexp.accumulate(lp)
    out[-1] = 0.0
    return _readonly(np.minimum(out, 0.0))


def _check_x(dist: BinConvDist, x: int, lo: int) -> int:
    if not isinstance(x, (int, np.integer)):
        raise DomainError(f"x must be an integer, got {x!r}")
    if not lo <= x <= dist.n:
        raise DomainError(f"x={x} outside [{lo}, {dist.n}]")
    return int(x)


def conv_pmf(dist: BinConvDist, x: int) -> LogProb:
    """Return ``log P(B = x)``."""
    x = _check_x(dist, x, 0)
    return float(dist.logpmf()[x])


def conv_tail(dist: BinConvDist, x: int) -> LogProb:
    """Return ``log P(B > x)`` for ``-1 <= x <= n``; exactly 0 at ``x = -1``."""
    x = _check_x(dist, x, -1)
    if x == -1:
        return 0.0
    return float(dist.logsf()[x])


def conv_cdf(dist: BinConvDist, x: int) -> LogProb:
    """Return ``log P(B <= x)`` for ``-1 <= x <= n``; summed from below, not as 1 - tail."""
    x = _check_x(dist, x, -1)
    if x == -1:
        return -math.inf
    return float(dist.logcdf()[x])


def binom_logsf(n: int, q: float, x: int) -> LogProb:
    """``log P(Binomial(n, q) > x)`` for ``q`` in the closed unit interval."""
    if not 0.0 <= q <= 1.0:
        raise DomainError(f"q must lie in [0, 1], got {q}")
    if x < 0:
        return 0.0
    if x >= n or q == 0.0:
        return -math.inf
    if q == 1.0:
        return 0.0
    lp = _convolve_logpmf(n, n, q)
    return float(min(np.logaddexp.reduce(lp[x + 1:]), 0.0))


def binom_tail_inverse(n: int, x: int, alpha: float) -> float:
    """Solve ``P(Binomial(n, q) > x) = alpha`` for ``q`` by bisection.

    The tail is strictly increasing in ``q``, running from 0 at ``q = 0`` to 1
    at ``q = 1``, so the root is unique.
    """
    if not 0 <= x < n:
        raise DomainError(f"need 0 <= x < n, got x={x}, n={n}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    lo, hi = 0.0, 1.0
    mid = 0.5
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        gap = math.exp(binom_logsf(n, mid, x)) - alpha
        if abs(gap) <= _TAIL_TOL:
            break
        if gap < 0:
            lo = mid
        else:
            hi = mid
    return mid
