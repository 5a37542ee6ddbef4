import csv
import io
import math

import numpy as np
import pytest
from scipy import stats

from sarr.base_tests import ZTest
from sarr.calibration import CalibrationTarget
from sarr.dp_testing import gated_rr_test, sarr_test
from sarr.errors import DomainError
from sarr.study import (
    CSV_COLUMNS,
    MECHANISMS,
    StudySpec,
    cell_seed,
    gen_skew_normal,
    gen_student_t_shift,
    gen_three_group_normal,
    replicate_stream,
    run_cell,
    run_study,
)


def small_spec(**kw):
    base = dict(study="custom", generator="normal", test="z", alphas=[0.05, 0.1], epsilons=[1.5],
                effects=[0.0, 0.4], ns=[60], ks=[1], mechanisms=list(MECHANISMS[:3]),
                alpha0_min=0.0, reps=50, master_seed=7)
    base.update(kw)
    return StudySpec.from_mapping(base)


class TestSeeding:
    def test_cell_seed_is_stable_and_distinct(self):
        a = cell_seed(1, "custom", (0.05, 1.0, 0.0, 60))
        assert a == cell_seed(1, "custom", (0.05, 1.0, 0.0, 60))
        assert a != cell_seed(2, "custom", (0.05, 1.0, 0.0, 60))
        assert a != cell_seed(1, "custom", (0.05, 1.0, 0.1, 60))
        assert 0 <= a < 2**64

    def test_streams_are_independent_by_key(self):
        x = replicate_stream(5, 0, 1, 0).random(4)
        assert np.array_equal(x, replicate_stream(5, 0, 1, 0).random(4))
        assert not np.array_equal(x, replicate_stream(5, 1, 1, 0).random(4))
        assert not np.array_equal(x, replicate_stream(5, 0, 2, 0).random(4))


class TestDeterminism:
    def test_csv_identical_across_workers(self):
        spec = small_spec()
        texts = {w: run_study(spec, workers=w).to_csv() for w in (1, 2, 8)}
        assert texts[1] == texts[2] == texts[8]
        header = next(csv.reader(io.StringIO(texts[1])))
        assert tuple(header) == CSV_COLUMNS

    def test_audit_lines_match_rows(self):
        spec = small_spec(alphas=[0.05], effects=[0.4])
        buf = io.StringIO()
        table = run_study(spec, audit=buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == spec.reps * len(table.rows)

    def test_study_replicate_equals_single_decision(self):
        spec = small_spec(alphas=[0.05], effects=[0.3], mechanisms=["gated_rr", "sarr"], ks=[2])
        cell = spec.cells()[0]
        audit = []
        run_cell(spec, cell, audit)
        seed = cell_seed(spec.master_seed, spec.study, cell)
        data_seed = cell_seed(spec.master_seed, spec.study, (cell[2], cell[3]))
        target = CalibrationTarget(cell[1], cell[0], 0.0)
        for r in range(spec.reps):
            data = replicate_stream(data_seed, r).standard_normal(cell[3]) + cell[2]
            sarr = sarr_test(data, ZTest(), target, k=2, rng=replicate_stream(seed, r, 3, 0))
            gated = gated_rr_test(data, ZTest(), cell[1], cell[0], rng=replicate_stream(seed, r, 2))
            recs = {a["mechanism"]: a["decision"] for a in audit if a["replicate"] == r}
            assert recs == {"sarr": sarr.d, "gated_rr": gated.d}


class TestRows:
    def test_null_level_of_example_preset(self):
        spec = StudySpec.preset("ztest_example1", effects=[0.0], reps=4000)
        table = run_study(spec)
        row = table.select(mechanism="sarr", k=2)[0]
        assert row["power"] == pytest.approx(0.05, abs=3 * math.sqrt(0.05 * 0.95 / spec.reps))
        assert row["alpha0"] == pytest.approx(0.089274, abs=1e-6)

    def test_infeasible_rows_are_reported(self):
        # k = 40 needs 81 subsets, more than 60 records allow for the z-test
        spec = small_spec(alphas=[0.05], effects=[0.0], ks=[1, 40])
        rows = run_study(spec).rows
        bad = [r for r in rows if r["status"] == "infeasible"]
        assert [r["k"] for r in bad] == [40]
        assert bad[0]["power"] is None
        text = run_study(spec).to_csv()
        assert "infeasible" in text

    def test_unreachable_alpha0_floor_is_infeasible(self):
        spec = small_spec(alphas=[0.005], epsilons=[0.1], effects=[0.0], ks=None,
                          mechanisms=["sarr"], alpha0_min="alpha", reps=5)
        (row,) = run_study(spec).rows
        assert row["status"] == "infeasible"

    def test_posterior_columns(self):
        spec = StudySpec.preset("wilcoxon_bayes", alphas=[0.05], epsilons=[1.0], effects=[0.0],
                                mechanisms=["nonprivate", "sarr"], reps=200)
        table = run_study(spec)
        assert "posterior_mean" in table.columns
        for row in table.rows:
            # under the null most decisions are 0, which pulls the posterior below the prior
            assert row["posterior_mean"] < 0.5
            assert 0 < row["p_d1_h1"] < 1


class TestSpec:
    def test_yaml_round_trip(self, tmp_path):
        path = tmp_path / "s.yaml"
        path.write_text("study: kruskal_wallis\nreps: 10\nns: [30]\nalphas: [0.05]\nepsilons: [1.0]\n")
        spec = StudySpec.from_file(path)
        assert spec.test == "kw" and spec.ns == (30,) and spec.reps == 10
        assert spec.mechanisms == MECHANISMS

    @pytest.mark.parametrize("mapping", [
        {"study": "custom", "generator": "normal", "test": "z", "alphas": [0.05], "epsilons": [1],
         "effects": [0], "ns": [10], "mechanisms": ["sarr"], "bogus": 1},
        {"study": "unknown"},
        {"study": "kruskal_wallis", "ns": [31]},
        {"study": "ztest_example1", "schema": 2},
        {"study": "ztest_example1", "mechanisms": ["median"]},
        {"study": "ztest_example1", "test": "kw"},
        {"study": "ztest_example1", "alphas": []},
    ])
    def test_rejects_bad_specs(self, mapping):
        with pytest.raises(DomainError):
            StudySpec.from_mapping(mapping)

    def test_top_level_must_be_mapping(self, tmp_path):
        path = tmp_path / "s.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(DomainError):
            StudySpec.from_file(path)


class TestGenerators:
    def test_student_t_center_and_tails(self):
        rng = np.random.default_rng(0)
        draws = 1_000_000
        x = gen_student_t_shift(draws, 0.0, 1.5, rng)
        assert abs(np.median(x)) < 0.01
        assert np.mean(np.abs(x) > 10) == pytest.approx(2 * stats.t.sf(10, 1.5), abs=0.003)
        assert np.median(gen_student_t_shift(100_000, 1.25, 1.5, rng)) == pytest.approx(1.25, abs=0.02)

    def test_three_groups(self):
        sample = gen_three_group_normal(200_000, np.random.default_rng(1))
        for g, mu in enumerate((1.0, 2.0, 3.0)):
            vals = sample.values[sample.labels == g]
            assert vals.size == 200_000
            assert vals.mean() == pytest.approx(mu, abs=0.02)
            assert vals.var() == pytest.approx(1.0, abs=0.02)

    def test_skew_normal_moments(self):
        rng = np.random.default_rng(2)
        theta = 1.5
        x = gen_skew_normal(1_000_000, theta, rng)
        delta = theta / math.sqrt(1 + theta**2)
        assert x.mean() == pytest.approx(delta * math.sqrt(2 / math.pi), abs=0.01)
        assert stats.skew(x) > 0
        assert stats.kstest(x, stats.skewnorm(theta).cdf).statistic < 0.01

    def test_skew_normal_zero_is_normal(self):
        x = gen_skew_normal(200_000, 0.0, np.random.default_rng(3))
        assert stats.kstest(x, "norm").statistic < 0.01

    def test_three_group_needs_records(self):
        with pytest.raises(DomainError):
            gen_three_group_normal(0, np.random.default_rng(0))
