"""Monte Carlo power studies with reproducible, order-free seeding.

A study is a grid of cells ``(alpha, epsilon, effect, n)``. Every replicate
draws one dataset, shared by all mechanisms and by every ``(alpha, epsilon)``
pair, from a stream keyed on ``(effect, n, replicate)``; each mechanism then
gets its own stream keyed on ``(cell seed, replicate, mechanism, k)``. Seeds
are hashes of the master seed and the cell coordinates, so results do not
depend on how cells are distributed over worker processes.

Within a replicate the draws follow the same order as the single-decision
functions in :mod:`sarr.dp_testing` (partition, then responses or noise), and
the subset tests of all replicates are evaluated in one batched call.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import IO, Optional, Sequence

import numpy as np
import yaml

from .base_tests import BaseTest, GroupedSample, KruskalWallis, WilcoxonSignedRank, ZTest
from .bayes import posterior_h1, table2_priors
from .calibration import STANDARD_ALPHAS, STANDARD_EPSILONS, CalibrationTarget, calibrate, min_k
from .dp_testing import (
    DEFAULT_CALIBRATION_REPS,
    laplace_calibrate,
    partition,
    stratified_partition,
)
from .errors import DomainError, InfeasibleError
from .mechanism import gated_rr_votes, sarr_votes

SCHEMA_VERSION = 1
DEFAULT_REPS = 2000
STUDIES = ("ztest_example1", "wilcoxon_bayes", "kruskal_wallis", "custom")
#: Canonical mechanism order; the index is part of each mechanism's stream key.
MECHANISMS = ("nonprivate", "gated_rr", "sarr", "avg_p", "sum")
#: Mechanisms whose behavior depends on the number of subsets.
SUBSET_MECHANISMS = ("sarr", "avg_p", "sum")
CSV_COLUMNS = ("study", "mechanism", "alpha", "epsilon", "k", "p", "alpha0", "effect", "n",
               "power", "se", "reps", "seed", "status")
POSTERIOR_COLUMNS = ("p_d1_h1", "posterior_mean", "posterior_se")
PRIOR_H1 = 0.5


# ---------------------------------------------------------------------------
# Data generators

def gen_normal_shift(n: int, delta: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from Normal(delta, 1)."""
    return delta + rng.standard_normal(n)


def gen_student_t_shift(n: int, theta: float, df: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws of ``theta + tau`` with ``tau`` Student-t on ``df`` degrees of freedom."""
    if not df > 0:
        raise DomainError(f"df must be positive, got {df}")
    return theta + rng.standard_t(df, n)


def gen_three_group_normal(b: int, rng: np.random.Generator,
                           means: Sequence[float] = (1.0, 2.0, 3.0)) -> GroupedSample:
    """Balanced groups of ``b`` unit-variance normals with the given means."""
    if b < 1:
        raise DomainError(f"need at least one record per group, got b={b}")
    groups = [mu + rng.standard_normal(b) for mu in means]
    return GroupedSample.from_groups(groups)


def gen_skew_normal(n: int, theta: float, rng: np.random.Generator) -> np.ndarray:
    """Skew-normal(0, 1, theta) draws via ``delta*|u1| + sqrt(1 - delta^2)*u2``."""
    delta = theta / math.sqrt(1.0 + theta * theta)
    u = rng.standard_normal((2, n))
    return delta * np.abs(u[0]) + math.sqrt(1.0 - delta * delta) * u[1]


def _draw(generator: str, n: int, effect: float, df: float, rng: np.random.Generator):
    if generator == "normal":
        return gen_normal_shift(n, effect, rng)
    if generator == "student_t":
        return gen_student_t_shift(n, effect, df, rng)
    if generator == "skew_normal":
        return gen_skew_normal(n, effect, rng)
    if generator == "three_group":
        # effect is the spacing between consecutive group means, starting at 1
        return gen_three_group_normal(n // 3, rng, means=(1.0, 1.0 + effect, 1.0 + 2 * effect))
    raise DomainError(f"unknown generator {generator!r}")


GENERATORS = ("normal", "student_t", "skew_normal", "three_group")
TESTS = ("z", "wilcoxon", "kw")


def make_test(name: str) -> BaseTest:
    if name == "z":
        return ZTest(0.0, 1.0)
    if name == "wilcoxon":
        return WilcoxonSignedRank(0.0)
    if name == "kw":
        return KruskalWallis(3)
    raise DomainError(f"unknown test {name!r}; expected one of {TESTS}")


# ---------------------------------------------------------------------------
# Study specification

_PRESETS = {
    "ztest_example1": dict(
        generator="normal", test="z", alphas=[0.05], epsilons=[1.5],
        effects=[round(0.1 * i, 10) for i in range(11)], ns=[105], ks=[0, 1, 2, 10],
        mechanisms=["nonprivate", "gated_rr", "sarr"], alpha0_min=0.0,
    ),
    "wilcoxon_bayes": dict(
        generator="student_t", test="wilcoxon", alphas=list(STANDARD_ALPHAS),
        epsilons=list(STANDARD_EPSILONS), effects=[0.25 * i for i in range(9)], ns=[200],
        mechanisms=["nonprivate", "sarr", "avg_p", "sum"], alpha0_min="alpha", df=1.5,
        posterior=True,
    ),
    "kruskal_wallis": dict(
        generator="three_group", test="kw", alphas=list(STANDARD_ALPHAS),
        epsilons=list(STANDARD_EPSILONS), effects=[1.0], ns=[15, 30, 45, 60, 90, 120, 150],
        mechanisms=list(MECHANISMS), alpha0_min="alpha",
    ),
}


@dataclass(frozen=True)
class StudySpec:
    """Grid, replication and mechanism settings of one study.

    ``alpha0_min`` is a number or the string ``"alpha"`` (use each cell's
    alpha). ``ks`` fixes the subset counts instead of using the minimum-k
    heuristic. Unset grid fields take the study's preset values.
    """

    study: str
    alphas: tuple = ()
    epsilons: tuple = ()
    effects: tuple = ()
    ns: tuple = ()
    reps: int = DEFAULT_REPS
    master_seed: int = 0
    mechanisms: tuple = ()
    generator: str = ""
    test: str = ""
    ks: Optional[tuple] = None
    alpha0_min: object = "alpha"
    df: float = 1.5
    posterior: bool = False
    calibration_reps: int = DEFAULT_CALIBRATION_REPS
    schema: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema != SCHEMA_VERSION:
            raise DomainError(f"unsupported schema version {self.schema}; expected {SCHEMA_VERSION}")
        if self.study not in STUDIES:
            raise DomainError(f"study must be one of {STUDIES}, got {self.study!r}")
        for name in ("alphas", "epsilons", "effects", "ns", "mechanisms"):
            if len(getattr(self, name)) == 0:
                raise DomainError(f"grid {name!r} must be nonempty")
        if self.reps < 1:
            raise DomainError(f"reps must be at least 1, got {self.reps}")
        bad = set(self.mechanisms) - set(MECHANISMS)
        if bad:
            raise DomainError(f"unknown mechanisms {sorted(bad)}; expected a subset of {MECHANISMS}")
        if self.generator not in GENERATORS:
            raise DomainError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.test not in TESTS:
            raise DomainError(f"test must be one of {TESTS}, got {self.test!r}")
        if (self.generator == "three_group") != (self.test == "kw"):
            raise DomainError("the Kruskal-Wallis test goes with the three_group generator")
        if self.alpha0_min != "alpha" and not isinstance(self.alpha0_min, (int, float)):
            raise DomainError("alpha0_min must be a number or 'alpha'")
        for a in self.alphas:
            if not 0 < a < 1:
                raise DomainError(f"alpha must lie in (0, 1), got {a}")
        for e in self.epsilons:
            if not e > 0:
                raise DomainError(f"epsilon must be positive, got {e}")
        if self.test == "kw" and any(n % 3 for n in self.ns):
            raise DomainError("three-group sample sizes must be multiples of 3")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "StudySpec":
        data = dict(mapping)
        study = data.get("study")
        if study not in STUDIES:
            raise DomainError(f"study must be one of {STUDIES}, got {study!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown study keys {sorted(unknown)}")
        merged = {**_PRESETS.get(study, {}), **data}
        for name in ("alphas", "epsilons", "effects", "ns", "mechanisms"):
            merged[name] = tuple(merged.get(name, ()))
        if merged.get("ks") is not None:
            merged["ks"] = tuple(int(k) for k in merged["ks"])
        merged["ns"] = tuple(int(n) for n in merged["ns"])
        return cls(**merged)

    @classmethod
    def from_file(cls, path) -> "StudySpec":
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise DomainError(f"{path}: expected a mapping at top level")
        return cls.from_mapping(data)

    @classmethod
    def preset(cls, study: str, **overrides) -> "StudySpec":
        return cls.from_mapping({"study": study, **overrides})

    def alpha0_floor(self, alpha: float) -> float:
        return float(alpha) if self.alpha0_min == "alpha" else float(self.alpha0_min)

    def cells(self) -> list[tuple]:
        return [(a, e, x, n) for a in self.alphas for e in self.epsilons
                for x in self.effects for n in self.ns]


@dataclass
class PowerTable:
    """Study output: one row per (cell, mechanism, k)."""

    rows: list = field(default_factory=list)
    posterior: bool = False

    @property
    def columns(self) -> tuple:
        return CSV_COLUMNS + (POSTERIOR_COLUMNS if self.posterior else ())

    def to_csv(self, stream: Optional[IO[str]] = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(row.get(c)) for c in self.columns])
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text

    def select(self, **where) -> list:
        return [r for r in self.rows if all(r.get(k) == v for k, v in where.items())]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else "%.10g" % value
    return str(value)


# ---------------------------------------------------------------------------
# Seeding

def cell_seed(master_seed: int, study: str, cell: tuple) -> int:
    """64-bit seed hashed from the master seed and the cell coordinates."""
    key = json.dumps([int(master_seed), study, *[repr(float(c)) for c in cell]])
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


def replicate_stream(seed: int, rep: int, mechanism: int = 0, k_index: int = 0) -> np.random.Generator:
    """Independent stream for one replicate; ``mechanism = 0`` is the data stream."""
    ss = np.random.SeedSequence(seed, spawn_key=(rep, mechanism, k_index))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# Replication engine

def _padded(pieces: list, labels: Optional[list] = None):
    width = max(len(p) for p in pieces)
    vals = np.full((len(pieces), width), np.nan)
    labs = np.full((len(pieces), width), -1, dtype=int) if labels is not None else None
    for i, p in enumerate(pieces):
        vals[i, :len(p)] = p
        if labs is not None:
            labs[i, :len(p)] = labels[i]
    return vals, labs


def _subset_pvalues(datasets: list, test: BaseTest, m: int, streams: list) -> np.ndarray:
    """Partition every replicate with its own stream and test all subsets at once."""
    pieces, labels = [], []
    for data, gen in zip(datasets, streams):
        if isinstance(data, GroupedSample):
            part = stratified_partition(data.labels, m, gen)
            for blk in part.blocks:
                pieces.append(data.values[blk])
                labels.append(data.labels[blk])
        else:
            part = partition(len(data), m, gen)
            pieces.extend(data[blk] for blk in part.blocks)
    vals, labs = _padded(pieces, labels if labels else None)
    return test.batch_pvalues(vals, labs).reshape(len(datasets), m)


def _full_pvalues(datasets: list, test: BaseTest) -> np.ndarray:
    if isinstance(datasets[0], GroupedSample):
        vals, labs = _padded([d.values for d in datasets], [d.labels for d in datasets])
        return test.batch_pvalues(vals, labs)
    vals, _ = _padded(datasets)
    return test.batch_pvalues(vals)


def _subsets_fit(spec: StudySpec, test: BaseTest, n: int, m: int) -> bool:
    if spec.generator == "three_group":
        return n // 3 >= m and 3 * (n // 3 // m) >= test.min_records
    return n // m >= test.min_records


class _Calibrations:
    """Per-process cache of SARR and Laplace calibrations."""

    def __init__(self, spec: StudySpec):
        self.spec = spec
        self._sarr: dict = {}
        self._laplace: dict = {}

    def sarr(self, alpha, epsilon, k):
        key = (alpha, epsilon, k)
        if key not in self._sarr:
            target = CalibrationTarget(epsilon, alpha, self.spec.alpha0_floor(alpha))
            try:
                self._sarr[key] = min_k(target)[1] if k is None else calibrate(target, k)
            except InfeasibleError as exc:
                self._sarr[key] = exc
        return self._sarr[key]

    def laplace(self, kind, k, epsilon, alpha):
        key = (kind, k, epsilon, alpha)
        if key not in self._laplace:
            self._laplace[key] = laplace_calibrate(kind, k, epsilon, alpha,
                                                   reps=self.spec.calibration_reps)
        return self._laplace[key]


_CACHE: dict = {}


def _calibrations(spec: StudySpec) -> _Calibrations:
    if spec not in _CACHE:
        _CACHE.clear()
        _CACHE[spec] = _Calibrations(spec)
    return _CACHE[spec]


def _row(spec, mech, cell, seed, **extra) -> dict:
    alpha, epsilon, effect, n = cell
    row = {"study": spec.study, "mechanism": mech, "alpha": float(alpha), "epsilon": float(epsilon),
           "effect": float(effect), "n": int(n), "reps": spec.reps, "seed": seed,
           "k": None, "p": None, "alpha0": None, "power": None, "se": None, "status": "ok"}
    row.update(extra)
    return row


def _finish(row: dict, decisions: np.ndarray) -> dict:
    power = float(decisions.mean())
    row["power"] = power
    row["se"] = math.sqrt(power * (1.0 - power) / decisions.size)
    return row


def _with_posterior(row: dict, p1: float) -> dict:
    alpha = row["alpha"]
    post1 = posterior_h1(1, PRIOR_H1, alpha, p1).p_h1_given_d
    post0 = posterior_h1(0, PRIOR_H1, alpha, p1).p_h1_given_d
    row["p_d1_h1"] = p1
    row["posterior_mean"] = post0 + (post1 - post0) * row["power"]
    row["posterior_se"] = abs(post1 - post0) * row["se"]
    return row


def run_cell(spec: StudySpec, cell: tuple, audit: Optional[list] = None) -> list[dict]:
    """All mechanism rows for one grid cell."""
    alpha, epsilon, effect, n = cell
    seed = cell_seed(spec.master_seed, spec.study, cell)
    test = make_test(spec.test)
    cache = _calibrations(spec)
    reps = range(spec.reps)
    # data do not depend on alpha or epsilon, so every cell with the same
    # (effect, n) sees the same datasets (common random numbers)
    data_seed = cell_seed(spec.master_seed, spec.study, (effect, n))
    datasets = [_draw(spec.generator, n, effect, spec.df, replicate_stream(data_seed, r)) for r in reps]
    rows = []

    def record(mech, k, decisions):
        if audit is not None:
            for r, d in enumerate(decisions):
                audit.append({"study": spec.study, "mechanism": mech, "alpha": alpha,
                              "epsilon": epsilon, "effect": effect, "n": n, "k": k,
                              "seed": seed, "replicate": r, "decision": int(d)})

    full_p = None
    for j, mech in enumerate(MECHANISMS, start=1):
        if mech not in spec.mechanisms or mech in SUBSET_MECHANISMS:
            continue
        if full_p is None:
            full_p = _full_pvalues(datasets, test)
        if mech == "nonprivate":
            d = (full_p < alpha).astype(int)
            row = _finish(_row(spec, mech, cell, seed, alpha0=float(alpha)), d)
            if spec.posterior:
                _with_posterior(row, table2_priors("truth", 0, n, alpha, epsilon))
        else:
            p = 1.0 / (1.0 + math.exp(-epsilon))
            x = (full_p < alpha).astype(int)
            d = np.concatenate([gated_rr_votes(x[r:r + 1], epsilon, alpha, alpha, replicate_stream(seed, r, j))
                                for r in reps])
            row = _finish(_row(spec, mech, cell, seed, k=0, p=p, alpha0=float(alpha)), d)
        record(mech, row["k"], d)
        rows.append(row)

    k_list = list(spec.ks) if spec.ks is not None else [None]
    for ki, k_req in enumerate(k_list):
        config = cache.sarr(alpha, epsilon, k_req)
        for j, mech in enumerate(MECHANISMS, start=1):
            if mech not in spec.mechanisms or mech not in SUBSET_MECHANISMS:
                continue
            if isinstance(config, InfeasibleError):
                rows.append(_row(spec, mech, cell, seed, k=k_req, status="infeasible"))
                continue
            k, m = config.k, config.m
            if not _subsets_fit(spec, test, n, m):
                rows.append(_row(spec, mech, cell, seed, k=k, status="infeasible"))
                continue
            streams = [replicate_stream(seed, r, j, ki) for r in reps]
            pvals = _subset_pvalues(datasets, test, m, streams)
            b = n // m
            if mech == "sarr":
                x = (pvals < config.alpha0).astype(int)
                d = np.concatenate([sarr_votes(x[r:r + 1], config.p, config.c, g)
                                    for r, g in enumerate(streams)])
                row = _finish(_row(spec, mech, cell, seed, k=k, p=config.p, alpha0=config.alpha0), d)
                if spec.posterior:
                    _with_posterior(row, table2_priors("sarr", k, b, config.alpha0, epsilon))
            else:
                lap = cache.laplace(mech, k, epsilon, alpha)
                noise = np.array([g.laplace(0.0, lap.noise_scale) for g in streams])
                if mech == "avg_p":
                    d = (pvals.mean(axis=1) + noise < lap.critical_value).astype(int)
                else:
                    d = ((pvals < lap.alpha0).sum(axis=1) + noise > lap.critical_value).astype(int)
                row = _finish(_row(spec, mech, cell, seed, k=k, alpha0=lap.alpha0), d)
                if spec.posterior:
                    level = lap.alpha0 if mech == "sum" else alpha
                    _with_posterior(row, table2_priors(mech, k, b, level, epsilon, laplace=lap))
            record(mech, k, d)
            rows.append(row)
    return rows


def _run_cell_task(args):
    spec, index, cell, want_audit = args
    audit = [] if want_audit else None
    return index, run_cell(spec, cell, audit), audit


def run_study(spec: StudySpec, workers: int = 1, audit: Optional[IO[str]] = None) -> PowerTable:
    """Run every cell of ``spec``; output is identical for any ``workers``."""
    cells = spec.cells()
    tasks = [(spec, i, c, audit is not None) for i, c in enumerate(cells)]
    results: dict = {}
    if workers <= 1 or len(cells) == 1:
        for t in tasks:
            i, rows, recs = _run_cell_task(t)
            results[i] = (rows, recs)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, rows, recs in pool.map(_run_cell_task, tasks):
                results[i] = (rows, recs)
    table = PowerTable(posterior=spec.posterior)
    for i in range(len(cells)):
        rows, recs = results[i]
        table.rows.extend(rows)
        if audit is not None:
            for rec in recs:
                audit.write(json.dumps(rec, sort_keys=True) + "\n")
    return table


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
