"""Differentially private hypothesis tests by subsampled-and-aggregated randomized response.

Split the data into ``2k + 1`` disjoint subsets, run an ordinary test on
each, pass each binary outcome through randomized response and report the
majority. ``p`` and the subset level ``alpha0`` are solved so the reported
decision is exactly eps-DP with type I error exactly ``alpha``.
"""

from .base_tests import (
    GroupedSample,
    KruskalWallis,
    TestResult,
    WilcoxonSignedRank,
    ZTest,
    kruskal_wallis,
    wilcoxon_signed_rank,
    z_power,
    z_test,
)
from .bayes import (
    BetaMuKappa,
    PosteriorReport,
    expected_pvalue_z,
    p_d1_given_h1,
    posterior_h1,
    table2_priors,
    unit_info_z_power,
)
from .binom_core import BinConvDist, binom_tail_inverse, conv_cdf, conv_pmf, conv_tail
from .calibration import (
    CalibrationTarget,
    PowerCurve,
    calibrate,
    min_k,
    power_curve,
    solve_alpha0,
    solve_p,
    table_min_k,
)
from .dp_testing import (
    LaplaceMechanismConfig,
    Partition,
    bonferroni_sarr,
    gated_rr_test,
    laplace_calibrate,
    laplace_test,
    load_delimited,
    partition,
    sarr_test,
    write_audit,
)
from .errors import CappedSearchError, DataError, DomainError, InfeasibleError, SARRError, UncalibratedError
from .mechanism import (
    MechanismConfig,
    PrivateDecision,
    disagreement_prob,
    epsilon_limit,
    epsilon_of,
    gate_probability,
    gated_rr_votes,
    min_alpha,
    p_bounds,
    randomized_response,
    rejection_prob,
    sarr_vote,
    sarr_votes,
)
from .study import PowerTable, StudySpec, run_study

__version__ = "0.1.0"
