"""Independent reference computations used by the tests.

Nothing here imports the package: exact rational convolutions, a
brute-force privacy level over all neighboring outcome vectors, and closed
forms for the normal-prior integrals.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from functools import lru_cache

from scipy.special import ndtr, ndtri


def exact_binom_pmf(n: int, p: Fraction) -> list[Fraction]:
    return [math.comb(n, x) * p**x * (1 - p) ** (n - x) for x in range(n + 1)]


def exact_conv_pmf(i: int, n: int, p: Fraction) -> list[Fraction]:
    """Law of Binomial(i, p) + Binomial(n - i, 1 - p) in exact arithmetic."""
    a = exact_binom_pmf(i, p)
    b = exact_binom_pmf(n - i, 1 - p)
    out = [Fraction(0)] * (n + 1)
    for x, pa in enumerate(a):
        for y, pb in enumerate(b):
            out[x + y] += pa * pb
    return out


def exact_tail(i: int, n: int, p: Fraction, x: int) -> Fraction:
    """P(B_i > x)."""
    return sum(exact_conv_pmf(i, n, p)[x + 1:], Fraction(0))


def _poisson_binomial(probs: tuple) -> list[float]:
    pmf = [1.0]
    for q in probs:
        nxt = [0.0] * (len(pmf) + 1)
        for t, w in enumerate(pmf):
            nxt[t] += w * (1 - q)
            nxt[t + 1] += w * q
        pmf = nxt
    return pmf


def brute_force_epsilon(k: int, c: int, p: float) -> float:
    """Privacy level of 1(T > c) by maximizing over every outcome vector and neighbor.

    Each subset outcome is reported truthfully with probability ``p``; a
    neighboring dataset changes at most one subset outcome. Both outputs of
    the mechanism are checked in both directions.
    """
    n = 2 * k + 1

    @lru_cache(maxsize=None)
    def output_probs(x: tuple) -> tuple[float, float]:
        pmf = _poisson_binomial(tuple(p if xi else 1 - p for xi in x))
        return math.fsum(pmf[: c + 1]), math.fsum(pmf[c + 1:])

    worst = 0.0
    for x in itertools.product((0, 1), repeat=n):
        px = output_probs(x)
        for j in range(n):
            y = x[:j] + (1 - x[j],) + x[j + 1:]
            py = output_probs(y)
            for o in (0, 1):
                worst = max(worst, math.log(px[o]) - math.log(py[o]))
    return worst


def z_critical(level: float) -> float:
    return float(-ndtri(level / 2))


def unit_info_z_power_closed(b: int, level: float) -> float:
    """E[power] for delta ~ N(0, 1): sqrt(b)*delta + Z is N(0, 1 + b)."""
    return float(2 * ndtr(-z_critical(level) / math.sqrt(1 + b)))


def expected_pvalue_z_closed(b: int) -> float:
    """E[2 Phi(-|W|)] for W ~ N(0, 1 + b), which equals (2/pi) arctan(1/sqrt(1 + b))."""
    return 2 / math.pi * math.atan(1 / math.sqrt(1 + b))
