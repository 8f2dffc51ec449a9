"""Inference with few treated units: sharp-null tests, prediction sets and
realized-effect confidence intervals."""

from .core import Assumption, Dataset, Hypothesis, HypothesisKind, IntervalSet, Level, TestResult, validate
from .estimators import ProxyKind, ProxyModel, control_residuals, diff_in_means, proxy_effect
from .intervals import (
    Interpretation,
    IntervalReport,
    appendix_b_rule,
    closed_form_interval,
    contains,
    interval_for,
    invert_tests,
)
from .quantile_models import (
    NormalQuantileModel,
    QuantileModel,
    ScaleFit,
    empirical_convolution,
    ferman_fit,
    ferman_psi,
    quantile,
)
from .sharp_tests import (
    PermutationPlan,
    ResidualMode,
    conley_taber_pvalue,
    permutation_pvalue,
    quantile_decision,
    run_test,
)

__version__ = "0.1.0"
