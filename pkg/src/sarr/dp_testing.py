"""End-to-end private tests built by subsample and aggregate.

The data are split at random into ``2k + 1`` disjoint subsets and a nonprivate
test runs in each subset. The per-subset results are then released through
one of three aggregators:

* ``sarr``: randomized response on each binary outcome, then a majority vote;
* ``avg_p``: mean subset p-value plus Laplace(1 / (eps (2k + 1))) noise;
* ``sum``: number of subset rejections plus Laplace(1 / eps) noise.

The Laplace critical values are found by simulating the statistic under the
null. Several hypotheses can be tested with a Bonferroni split of both alpha
and epsilon.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from .base_tests import BaseTest, GroupedSample
from .calibration import CalibrationTarget, calibrate
from .errors import DataError, DomainError, InfeasibleError, UncalibratedError
from .mechanism import (
    MechanismConfig,
    PrivateDecision,
    as_generator,
    gate_probability,
    sarr_vote,
)

#: Default number of null simulations behind a Laplace critical value.
DEFAULT_CALIBRATION_REPS = 1_000_000
#: Seed used when no calibration stream is supplied; recorded in the config.
DEFAULT_CALIBRATION_SEED = 20_231_114
LAPLACE_KINDS = ("avg_p", "sum")

_CHUNK = 200_000


@dataclass(frozen=True)
class Partition:
    """Balanced random split of ``n`` records into ``m`` subsets.

    ``blocks[j]`` holds the record indices of subset ``j`` and
    ``assignment[i]`` the subset of record ``i``.
    """

    m: int
    blocks: tuple
    assignment: np.ndarray

    @property
    def sizes(self) -> tuple:
        return tuple(len(b) for b in self.blocks)


def _block_sizes(n: int, m: int) -> list[int]:
    base, extra = divmod(n, m)
    return [base + 1] * extra + [base] * (m - extra)


def _check_m(n: int, m: int) -> None:
    if m < 1 or m % 2 == 0:
        raise DomainError(f"subset count must be odd and positive, got m={m}")
    if m > n:
        raise DataError(f"cannot split {n} records into {m} nonempty subsets")


def partition(n: int, m: int, rng) -> Partition:
    """Shuffle ``0..n-1`` and cut it into ``m`` blocks whose sizes differ by at most 1.

    Leftover records go to the lowest-indexed blocks.
    """
    _check_m(n, m)
    gen, _ = as_generator(rng)
    perm = gen.permutation(n)
    cuts = np.cumsum(_block_sizes(n, m))[:-1]
    blocks = tuple(np.split(perm, cuts))
    assignment = np.empty(n, dtype=int)
    for j, b in enumerate(blocks):
        assignment[b] = j
    return Partition(m=m, blocks=blocks, assignment=assignment)


def stratified_partition(labels: np.ndarray, m: int, rng) -> Partition:
    """Partition each group separately so every subset sees every group.

    Groups are processed in sorted label order; block ``j`` of every group
    goes to subset ``j``.
    """
    labels = np.asarray(labels)
    if m < 1 or m % 2 == 0:
        raise DomainError(f"subset count must be odd and positive, got m={m}")
    gen, _ = as_generator(rng)
    parts = [[] for _ in range(m)]
    for g in np.unique(labels):
        idx = np.flatnonzero(labels == g)
        if idx.size < m:
            raise DataError(f"group {str(g)!r} has {idx.size} records, fewer than the {m} subsets")
        perm = idx[gen.permutation(idx.size)]
        cuts = np.cumsum(_block_sizes(idx.size, m))[:-1]
        for j, block in enumerate(np.split(perm, cuts)):
            parts[j].append(block)
    blocks = tuple(np.concatenate(p) for p in parts)
    assignment = np.empty(labels.size, dtype=int)
    for j, b in enumerate(blocks):
        assignment[b] = j
    return Partition(m=m, blocks=blocks, assignment=assignment)


def split(data, test: BaseTest, m: int, rng) -> list:
    """Random disjoint subsets of ``data`` shaped for ``test``."""
    n = test.n_records(data)
    if isinstance(data, GroupedSample):
        part = stratified_partition(data.labels, m, rng)
    else:
        part = partition(n, m, rng)
    if min(part.sizes) < test.min_records:
        raise DataError(
            f"{test.method} needs {test.min_records} records per subset; "
            f"{n} records over {m} subsets is too few"
        )
    return [test.take(data, b) for b in part.blocks]


# ---------------------------------------------------------------------------
# Randomized response aggregation

def sarr_test(
    data,
    test: BaseTest,
    target: CalibrationTarget,
    k: Optional[int] = None,
    rng=None,
) -> PrivateDecision:
    """Private decision from subset tests aggregated by randomized response.

    ``k`` defaults to the minimum-k heuristic. Random draws are consumed in
    the order: partition, subset tests (randomized mode only), responses.
    """
    config = calibrate(target, k)
    gen, seed = as_generator(rng)
    subsets = split(data, test, config.m, gen)
    outcomes = [test(s, config.alpha0, rng=gen).decision for s in subsets]
    decision = sarr_vote(outcomes, config.p, config.c, gen, alpha0=config.alpha0, alpha=target.alpha)
    meta = {
        "test": test.method,
        "n": test.n_records(data),
        "subset_sizes": [len(s) for s in subsets],
        "alpha0_min": target.alpha0_min,
        "subset_rejections": int(sum(outcomes)),
    }
    return dataclasses.replace(decision, seed=seed, meta=meta)


def gated_rr_test(
    data,
    test: BaseTest,
    epsilon: float,
    alpha: float,
    alpha0: Optional[float] = None,
    rng=None,
) -> PrivateDecision:
    """The k = 0 baseline: randomized response on the full-data test, times a Bernoulli gate."""
    alpha0 = alpha if alpha0 is None else alpha0
    rho = gate_probability(epsilon, alpha0, alpha)
    p = 1.0 / (1.0 + math.exp(-epsilon))
    gen, seed = as_generator(rng)
    x = test(data, alpha0, rng=gen).decision
    reported = x if gen.random() < p else 1 - x
    gate = int(gen.random() < rho)
    return PrivateDecision(
        d=gate * reported,
        epsilon=epsilon,
        alpha=alpha,
        vote_count=None,
        config=MechanismConfig(k=0, p=p, alpha0=alpha0),
        seed=seed,
        mechanism="gated_rr",
        meta={"test": test.method, "gate": rho},
    )


# ---------------------------------------------------------------------------
# Laplace competitors

@dataclass(frozen=True)
class LaplaceMechanismConfig:
    kind: str
    k: int
    epsilon: float
    alpha: float
    alpha0: Optional[float] = None
    critical_value: Optional[float] = None
    calibration_reps: int = 0
    calibration_seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in LAPLACE_KINDS:
            raise DomainError(f"kind must be one of {LAPLACE_KINDS}, got {self.kind!r}")
        if self.k < 0:
            raise DomainError("k must be nonnegative")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")

    @property
    def m(self) -> int:
        return 2 * self.k + 1

    @property
    def noise_scale(self) -> float:
        return laplace_noise_scale(self.kind, self.k, self.epsilon)


def laplace_noise_scale(kind: str, k: int, epsilon: float) -> float:
    """Laplace scale: the statistic's sensitivity divided by epsilon."""
    if kind == "avg_p":
        return 1.0 / (epsilon * (2 * k + 1))
    if kind == "sum":
        return 1.0 / epsilon
    raise DomainError(f"unknown Laplace mechanism {kind!r}")


def laplace_null_statistics(kind: str, k: int, epsilon: float, alpha0: Optional[float],
                            reps: int, rng: np.random.Generator) -> np.ndarray:
    """Simulated null draws of the noisy aggregate, generated in fixed-size chunks."""
    m = 2 * k + 1
    scale = laplace_noise_scale(kind, k, epsilon)
    out = np.empty(reps)
    for start in range(0, reps, _CHUNK):
        size = min(_CHUNK, reps - start)
        if kind == "avg_p":
            base = rng.random((size, m)).mean(axis=1)
        else:
            base = rng.binomial(m, alpha0, size).astype(float)
        out[start:start + size] = base + rng.laplace(0.0, scale, size)
    return out


def laplace_calibrate(
    kind: str,
    k: int,
    epsilon: float,
    alpha: float,
    alpha0: Optional[float] = None,
    reps: int = DEFAULT_CALIBRATION_REPS,
    rng=None,
) -> LaplaceMechanismConfig:
    """Monte Carlo critical value giving null rejection rate ``alpha``.

    ``avg_p`` rejects when the noisy mean p-value falls below the
    ``alpha``-quantile of its null law (p-values Uniform(0, 1)). ``sum``
    rejects when the noisy count exceeds the ``1 - alpha`` quantile of
    ``Binomial(2k + 1, alpha0) + noise``; ``alpha0`` defaults to ``alpha``.
    """
    if kind not in LAPLACE_KINDS:
        raise DomainError(f"kind must be one of {LAPLACE_KINDS}, got {kind!r}")
    if reps < 10_000:
        raise DomainError(f"need at least 10^4 calibration draws, got {reps}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if kind == "sum":
        alpha0 = alpha if alpha0 is None else float(alpha0)
        if not 0.0 <= alpha0 <= 1.0:
            raise DomainError(f"alpha0 must lie in [0, 1], got {alpha0}")
    else:
        alpha0 = None
    if rng is None:
        rng = DEFAULT_CALIBRATION_SEED
    gen, seed = as_generator(rng)
    draws = laplace_null_statistics(kind, k, epsilon, alpha0, reps, gen)
    q = alpha if kind == "avg_p" else 1.0 - alpha
    critical = float(np.quantile(draws, q))
    return LaplaceMechanismConfig(kind=kind, k=k, epsilon=epsilon, alpha=alpha, alpha0=alpha0,
                                  critical_value=critical, calibration_reps=reps,
                                  calibration_seed=seed)


def laplace_decide(kind: str, aggregate, noise, critical_value):
    """Threshold the noisy aggregate; works elementwise on arrays."""
    stat = np.asarray(aggregate, dtype=float) + noise
    if kind == "avg_p":
        return (stat < critical_value).astype(int), stat
    return (stat > critical_value).astype(int), stat


def laplace_test(data, test: BaseTest, config: LaplaceMechanismConfig, rng=None) -> PrivateDecision:
    """Private decision from a Laplace-perturbed subset aggregate."""
    if config.critical_value is None:
        raise UncalibratedError("Laplace mechanism has no critical value; run laplace_calibrate first")
    gen, seed = as_generator(rng)
    subsets = split(data, test, config.m, gen)
    if config.kind == "avg_p":
        results = [test(s, 0.0) for s in subsets]
        aggregate = float(np.mean([r.p_value for r in results]))
    else:
        results = [test(s, config.alpha0, rng=gen) for s in subsets]
        aggregate = float(sum(r.decision for r in results))
    noise = gen.laplace(0.0, config.noise_scale)
    d, stat = laplace_decide(config.kind, aggregate, noise, config.critical_value)
    return PrivateDecision(
        d=int(d),
        epsilon=config.epsilon,
        alpha=config.alpha,
        vote_count=None,
        config=config,
        seed=seed,
        mechanism=config.kind,
        statistic=float(stat),
        meta={
            "test": test.method,
            "critical_value": config.critical_value,
            "calibration_reps": config.calibration_reps,
            "calibration_seed": config.calibration_seed,
            "noise_scale": config.noise_scale,
        },
    )


# ---------------------------------------------------------------------------
# Multiple hypotheses

def bonferroni_sarr(
    data,
    tests: Sequence[BaseTest],
    target: CalibrationTarget,
    rng=None,
    k: Optional[int] = None,
) -> list[PrivateDecision]:
    """Test ``m`` hypotheses, each at level ``alpha/m`` and privacy ``eps/m``.

    Each hypothesis gets its own random partition of the same data. All
    calibrations are checked before any data is touched; infeasible
    hypotheses are named in the raised error.
    """
    m = len(tests)
    if m < 1:
        raise DomainError("need at least one test")
    sub = CalibrationTarget(target.epsilon / m, target.alpha / m, target.alpha0_min)
    failures = []
    for j, _ in enumerate(tests):
        try:
            calibrate(sub, k)
        except InfeasibleError as exc:
            failures.append(f"hypothesis {j}: {exc}")
    if failures:
        raise InfeasibleError("; ".join(failures))
    gen, seed = as_generator(rng)
    out = []
    for j, test in enumerate(tests):
        dec = sarr_test(data, test, sub, k, gen)
        meta = dict(dec.meta, hypothesis=j, family_size=m, total_epsilon=m * sub.epsilon,
                    familywise_alpha=target.alpha)
        out.append(dataclasses.replace(dec, seed=seed, meta=meta))
    return out


# ---------------------------------------------------------------------------
# Input and audit output

def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _resolve_column(spec, header: Optional[list[str]]) -> int:
    if isinstance(spec, int):
        return spec
    if isinstance(spec, str) and spec.isdigit():
        return int(spec)
    if header is None or spec not in header:
        raise DataError(f"column {spec!r} not found")
    return header.index(spec)


def load_delimited(
    source,
    value_column=0,
    group_column=None,
    delimiter: Optional[str] = None,
):
    """Read one record per line from a delimited text file or stream.

    A first line whose value field is not numeric is treated as a header, and
    columns may then be named. With ``group_column`` the result is a
    :class:`GroupedSample`, otherwise a 1-d float array.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="") as fh:
            text = fh.read()
    else:
        text = source.read()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError("input has no records")
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(lines[0], delimiters=",;\t |").delimiter
        except csv.Error:
            delimiter = ","
    rows = list(csv.reader(lines, delimiter=delimiter, skipinitialspace=True))
    header = None
    if isinstance(value_column, str) and not value_column.isdigit():
        has_header = True
    else:
        col = int(value_column)
        has_header = col < len(rows[0]) and not _is_number(rows[0][col])
    if has_header:
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    vcol = _resolve_column(value_column, header)
    gcol = None if group_column is None else _resolve_column(group_column, header)
    values, groups = [], []
    for lineno, row in enumerate(rows, start=2 if header else 1):
        try:
            values.append(float(row[vcol]))
            if gcol is not None:
                groups.append(row[gcol].strip())
        except (IndexError, ValueError) as exc:
            raise DataError(f"bad record on line {lineno}: {row!r}") from exc
    if not values:
        raise DataError("input has no records")
    x = np.asarray(values)
    if not np.all(np.isfinite(x)):
        raise DataError("input contains non-finite values")
    if gcol is None:
        return x
    return GroupedSample(x, np.asarray(groups))


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")


def audit_json(record: dict) -> str:
    return json.dumps(record, sort_keys=True, default=_json_default)


def write_audit(decisions: Iterable[PrivateDecision], stream: IO[str]) -> None:
    """One JSON object per line, keys sorted."""
    for dec in decisions:
        stream.write(audit_json(dec.to_record()) + "\n")


def audit_lines(decisions: Iterable[PrivateDecision]) -> str:
    buf = io.StringIO()
    write_audit(decisions, buf)
    return buf.getvalue()
