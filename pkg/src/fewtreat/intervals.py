"""Prediction sets and realized-effect confidence sets.

A quantile-threshold test inverts to the closed interval
``[alpha_hat - Q(1 - gamma/2), alpha_hat - Q(gamma/2)]``; arbitrary decision
rules are inverted numerically by :func:`invert_tests`. Whether the result is
read as a prediction set or as a realized-effect interval does not change the
numbers, only the assumptions attached to the report.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from . import errors
from .core import Assumption, Dataset, IntervalSet, Level
from .estimators import diff_in_means
from .sharp_tests import (
    PermutationPlan,
    ResidualMode,
    conley_taber_pvalue,
    permutation_pvalue,
    quantile_decision,
    reference_model,
)

DecisionRule = Callable[[float], int]


class Interpretation(str, enum.Enum):
    PREDICTION = "PredictionSet"
    REALIZED = "RealizedEffectCI"

    @classmethod
    def parse(cls, value) -> Interpretation:
        if isinstance(value, cls):
            return value
        aliases = {"prediction": cls.PREDICTION, "realized": cls.REALIZED}
        try:
            return aliases.get(str(value).lower()) or cls(value)
        except ValueError:
            raise errors.ConfigError(f"unknown interpretation {value!r}") from None


@dataclass(frozen=True)
class IntervalReport:
    set: IntervalSet
    interpretation: Interpretation
    level: Level
    valid_under: frozenset[Assumption]
    method: str

    def __post_init__(self):
        if self.interpretation is Interpretation.REALIZED and Assumption.INDEPENDENT_EFFECTS not in self.valid_under:
            raise ValueError("a realized-effect interval must carry the IndependentEffects assumption")

    def contains(self, c: float) -> bool:
        return self.set.contains(c)

    def to_dict(self) -> dict:
        return {
            "intervals": self.set.to_list(),
            "interpretation": self.interpretation.value,
            "level": self.level.confidence,
            "gamma": self.level.gamma,
            "valid_under": sorted(a.value for a in self.valid_under),
            "method": self.method,
        }


def _tags(base, interpretation: Interpretation) -> frozenset[Assumption]:
    tags = set(base)
    if interpretation is Interpretation.REALIZED:
        tags.add(Assumption.INDEPENDENT_EFFECTS)
    return frozenset(tags)


def closed_form_interval(
    alpha_hat: float,
    qm,
    level: Level,
    interpretation=Interpretation.PREDICTION,
    *,
    base=(Assumption.IID_CONTROLS,),
    method: str = "quantile",
) -> IntervalReport:
    interpretation = Interpretation.parse(interpretation)
    lo_q, hi_q = qm.quantile(level.lower), qm.quantile(level.upper)
    if lo_q > hi_q:
        raise errors.QuantileOrderViolation(f"lower quantile {lo_q} exceeds upper quantile {hi_q}")
    iv = IntervalSet.single(alpha_hat - hi_q, alpha_hat - lo_q)
    return IntervalReport(iv, interpretation, level, _tags(base, interpretation), method)


def default_refine_tol(lo: float, hi: float) -> float:
    return 1e-9 * max(1.0, abs(hi - lo))


def _grid_points(lo: float, hi: float, step: float) -> np.ndarray:
    if not (math.isfinite(lo) and math.isfinite(hi) and math.isfinite(step)) or hi < lo or step <= 0:
        raise errors.EmptyGrid(f"invalid grid ({lo}, {hi}, {step})")
    k = int(round((hi - lo) / step)) + 1
    return np.linspace(lo, hi, max(k, 1)) if k > 1 else np.array([lo])


def _refine(phi: DecisionRule, rejected: float, accepted: float, tol: float) -> float:
    for _ in range(64):
        if abs(accepted - rejected) <= tol:
            return accepted
        mid = 0.5 * (rejected + accepted)
        if mid == rejected or mid == accepted:
            # adjacent floats: no further progress is possible
            raise errors.NonConvergentRefinement(
                f"refine_tol {tol} is finer than float spacing at {accepted}"
            )
        if phi(mid) == 0:
            accepted = mid
        else:
            rejected = mid
    if abs(accepted - rejected) <= tol:
        return accepted
    raise errors.NonConvergentRefinement(f"bracket [{rejected}, {accepted}] wider than {tol} after 64 bisections")


def invert_tests(phi: DecisionRule, grid: tuple[float, float, float], refine_tol: float | None = None) -> IntervalSet:
    """Set of ``c`` with ``phi(c) == 0``, as maximal closed intervals.

    ``phi`` is evaluated on the grid ``(lo, hi, step)``; each accept/reject flip
    between neighbouring points is bisected down to ``refine_tol``. Accepted
    runs touching the grid edge stop at the edge. Acceptance regions narrower
    than the grid step can be missed.
    """
    lo, hi, step = grid
    points = _grid_points(lo, hi, step)
    tol = default_refine_tol(lo, hi) if refine_tol is None else refine_tol
    if tol <= 0:
        raise errors.ConfigError("refine_tol must be positive")
    accept = np.array([phi(float(c)) == 0 for c in points])
    out = []
    i, k = 0, points.size
    while i < k:
        if not accept[i]:
            i += 1
            continue
        j = i
        while j + 1 < k and accept[j + 1]:
            j += 1
        left = float(points[i]) if i == 0 else _refine(phi, float(points[i - 1]), float(points[i]), tol)
        right = float(points[j]) if j == k - 1 else _refine(phi, float(points[j + 1]), float(points[j]), tol)
        out.append((left, right))
        i = j + 1
    return IntervalSet(tuple(out))


def contains(report, c: float) -> int:
    """1 if ``c`` lies in the set; ``1 - contains`` is the implied sharp-null test."""
    s = report.set if isinstance(report, IntervalReport) else report
    return int(s.contains(c))


@dataclass(frozen=True)
class MaxStatisticRule:
    """Two-treated, one-control rule rejecting when either treated-minus-control
    gap is more than ``iota`` away from ``c``."""

    y_t1: float
    y_t2: float
    y_c: float
    iota: float

    def __post_init__(self):
        if not self.iota > 0:
            raise errors.ConfigError("iota must be positive")

    def phi(self, c: float) -> int:
        g1, g2 = self.y_t1 - self.y_c, self.y_t2 - self.y_c
        return int(max(abs(g1 - c), abs(g2 - c)) > self.iota)

    __call__ = phi

    def region(self) -> IntervalSet:
        if abs(self.y_t1 - self.y_t2) > 2 * self.iota:
            return IntervalSet.empty()
        g1, g2 = self.y_t1 - self.y_c, self.y_t2 - self.y_c
        lo, hi = max(g1, g2) - self.iota, min(g1, g2) + self.iota
        if lo > hi:  # rounding at the emptiness boundary
            return IntervalSet.empty()
        return IntervalSet.single(lo, hi)


def appendix_b_rule(y_t1: float, y_t2: float, y_c: float, iota: float) -> MaxStatisticRule:
    """Decision-rule family whose inversion can be empty; see :class:`MaxStatisticRule`."""
    return MaxStatisticRule(float(y_t1), float(y_t2), float(y_c), float(iota))


def default_grid(alpha_hat: float, qm, n_points: int = 2001, lo=None, hi=None) -> tuple[float, float, float]:
    span = qm.quantile(0.95) - qm.quantile(0.05)
    if span <= 0:
        span = 1.0
    lo = alpha_hat - 10 * span if lo is None else lo
    hi = alpha_hat + 10 * span if hi is None else hi
    if n_points < 1:
        raise errors.EmptyGrid("grid needs at least one point")
    step = (hi - lo) / (n_points - 1) if n_points > 1 else 1.0
    return lo, hi, step


def decision_family(
    ds: Dataset,
    method: str,
    level: Level,
    *,
    budget: int = 200_000,
    seed: int = 0,
    residual_mode=ResidualMode.ALL_N_NULL_IMPOSED,
    qm=None,
) -> DecisionRule:
    """``c -> phi_c`` for the named method on a fixed dataset."""
    if method in ("quantile", "ferman"):
        if method == "ferman" and not ds.has_covariates:
            raise errors.MethodIncompatible("the ferman method needs covariates")
        model = qm if qm is not None else reference_model(ds, method, budget, seed)
        alpha_hat = diff_in_means(ds)
        return lambda c: quantile_decision(alpha_hat, c, model, level)
    if method == "perm":
        plan = PermutationPlan(budget=budget, seed=seed)
        return lambda c: int(permutation_pvalue(ds, c, plan, level).reject)
    if method == "ct":
        return lambda c: int(conley_taber_pvalue(ds, c, residual_mode, level).reject)
    raise errors.ConfigError(f"unknown method {method!r}")


def interval_for(
    ds: Dataset,
    method: str,
    level: Level,
    interpretation=Interpretation.PREDICTION,
    *,
    budget: int = 200_000,
    seed: int = 0,
    residual_mode=ResidualMode.ALL_N_NULL_IMPOSED,
    grid=None,
    refine_tol: float | None = None,
) -> IntervalReport:
    """Interval for the treated-average effect by the named method.

    ``quantile`` and ``ferman`` use the closed form; ``perm`` and ``ct`` are
    inverted on a grid.
    """
    interpretation = Interpretation.parse(interpretation)
    if method == "ferman":
        if not ds.has_covariates:
            raise errors.MethodIncompatible("the ferman method needs covariates")
        if not level.gamma < 0.5:
            raise errors.ConfigError("the scale-model interval needs gamma < 1/2")
    if method in ("quantile", "ferman"):
        qm = reference_model(ds, method, budget, seed)
        base = (Assumption.SCALE_MODEL,) if method == "ferman" else (Assumption.IID_CONTROLS,)
        return closed_form_interval(diff_in_means(ds), qm, level, interpretation, base=base, method=method)
    if method in ("perm", "ct"):
        phi = decision_family(ds, method, level, budget=budget, seed=seed, residual_mode=residual_mode)
        if grid is None:
            grid = default_grid(diff_in_means(ds), reference_model(ds, "quantile", budget, seed))
        iv = invert_tests(phi, grid, refine_tol)
        return IntervalReport(iv, interpretation, level, _tags((Assumption.IID_CONTROLS,), interpretation), method)
    raise errors.ConfigError(f"unknown method {method!r}")
