"""Replication engine and coverage/size reports.

Each replication ``i`` draws its data from the stream ``(seed, 0, i)`` and
any method randomness from ``(seed, 1, i)``, so results do not depend on how
replications are split across worker processes. Per-replication outcomes are
concatenated in index order before anything is summed.
"""

from __future__ import annotations

import math
import os
from collections.abc import Mapping
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import multiprocessing as mp
import numpy as np
from scipy import stats

from .. import errors
from ..core import Level
from ..estimators import average, diff_in_means, proxy_effect, ProxyModel, ProxyKind
from ..intervals import appendix_b_rule, closed_form_interval
from ..quantile_models import NormalQuantileModel
from ..sharp_tests import (
    PermutationPlan,
    ResidualMode,
    conley_taber_pvalue,
    permutation_pvalue,
    quantile_decision,
    reference_quantiles,
)
from .dgp import DgpKind, DgpSpec, Draw, derived_seed, draw, draw_effects, draw_outcomes, error_decomposition, replication_rng

METHODS = ("perm", "ct", "quantile", "ferman", "normal", "welch", "max_stat")
INTERVAL_METHODS = {"quantile", "ferman", "normal", "welch", "max_stat"}


@dataclass(frozen=True)
class MethodSpec:
    """Inference method evaluated on every replication.

    ``null_c`` turns on a test of that value (sharp null / realized effect);
    interval methods always record SATT coverage.
    """

    name: str
    gamma: float = 0.05
    null_c: float | None = None
    budget: int = 200_000
    residual_mode: str = ResidualMode.ALL_N_NULL_IMPOSED.value
    iota: float | None = None
    # extra levels at which p-value methods report a rejection rate
    report_gammas: tuple[float, ...] = (0.01, 0.05, 0.10, 0.20)

    def __post_init__(self):
        if self.name not in METHODS:
            raise errors.ConfigError(f"unknown method {self.name!r}; expected one of {METHODS}")
        Level(self.gamma)
        if self.budget < 1:
            raise errors.BudgetZero("budget must be at least 1")
        object.__setattr__(self, "residual_mode", ResidualMode(self.residual_mode).value)
        object.__setattr__(self, "report_gammas", tuple(float(g) for g in self.report_gammas))
        for g in self.report_gammas:
            Level(g)

    @property
    def level(self) -> Level:
        return Level(self.gamma)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def appendix_b_iota(gamma: float, mc: int = 10**6, seed: int = 0, cov=((2.0, 1.0), (1.0, 2.0))) -> float:
    """Monte Carlo ``(1 - gamma)`` quantile of ``max(|Z1|, |Z2|)`` for a centred
    bivariate normal ``Z`` with covariance ``cov``."""
    Level(gamma)
    if mc < 10_000:
        raise errors.ConfigError("need at least 10000 draws")
    chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    rng = np.random.default_rng(seed)
    parts = []
    chunk = 1_000_000
    for start in range(0, mc, chunk):
        z = rng.standard_normal((min(chunk, mc - start), 2)) @ chol.T
        parts.append(np.abs(z).max(axis=1))
    m = np.concatenate(parts)
    k = math.ceil((1.0 - gamma) * mc) - 1
    return float(np.partition(m, k)[k])


def check_compatible(spec: DgpSpec, method: MethodSpec) -> None:
    if method.name == "ferman" and not spec.has_covariates:
        raise errors.MethodIncompatible(f"the ferman method needs covariates; {spec.kind.value} has none")
    if method.name == "ferman" and not method.gamma < 0.5:
        raise errors.MethodIncompatible("the scale-model interval needs gamma < 1/2")
    if method.name == "max_stat" and spec.kind is not DgpKind.APPENDIX_B:
        raise errors.MethodIncompatible("the max-statistic rule is defined for the appendix_b design only")
    if method.name == "welch" and (spec.n1 < 2 or spec.n0 < 2):
        raise errors.MethodIncompatible("the unequal-variance t-interval needs two units per group")
    if method.name == "normal":
        known_error_law(spec)


def known_error_law(spec: DgpSpec) -> NormalQuantileModel:
    """Exact law of the treated mean error when untreated outcomes are normal
    with known mean."""
    if spec.kind is DgpKind.APPENDIX_A:
        return NormalQuantileModel(0.0, 1.0, 1)
    if spec.kind in (DgpKind.IID_NORMAL, DgpKind.DETERMINISTIC_HETERO, DgpKind.UNEQUAL_VARIANCE) or (
        spec.kind is DgpKind.WEATHER_MIXTURE and spec.params["independent"] and spec.params["pi"] in (0.0, 1.0)
    ):
        return NormalQuantileModel(0.0, spec.params["sigma"] / math.sqrt(spec.n1), spec.n1)
    raise errors.MethodIncompatible(f"no known normal error law for {spec.kind.value}")


def welch_interval(ds, gamma: float) -> tuple[float, float]:
    """Unequal-variance t-interval for the difference in means."""
    yt, yc = ds.y_treated, ds.y_control
    v1, v0 = np.var(yt, ddof=1) / yt.size, np.var(yc, ddof=1) / yc.size
    se = math.sqrt(v1 + v0)
    est = diff_in_means(ds)
    if se == 0:
        return est, est
    df = (v1 + v0) ** 2 / (v1**2 / (yt.size - 1) + v0**2 / (yc.size - 1))
    half = stats.t.ppf(1 - gamma / 2, df) * se
    return est - half, est + half


@dataclass
class _Context:
    spec: DgpSpec
    method: MethodSpec
    iota: float | None = None


_RANDOMIZED = {"perm", "quantile", "ferman"}


def _evaluate(ctx: _Context, sample: Draw, seed_path: tuple[int, ...]) -> tuple[float, ...]:
    """(covered, reject, empty, length, p_value); NaN marks "not applicable"."""
    m, ds, level = ctx.method, sample.dataset, ctx.method.level
    method_seed = derived_seed(ctx.spec.seed, *seed_path) if m.name in _RANDOMIZED else 0
    nan = math.nan
    covered = reject = empty = length = pval = nan
    lo = hi = None
    c = m.null_c
    if m.name == "perm":
        res = permutation_pvalue(ds, c if c is not None else 0.0, PermutationPlan(m.budget, method_seed), level)
        reject = float(res.reject) if c is not None else nan
        pval = res.p_value if c is not None else nan
    elif m.name == "ct":
        res = conley_taber_pvalue(ds, c if c is not None else 0.0, m.residual_mode, level)
        reject = float(res.reject) if c is not None else nan
        pval = res.p_value if c is not None else nan
    elif m.name in ("quantile", "ferman", "normal"):
        if m.name == "normal":
            qm = known_error_law(ctx.spec)
            mu = ctx.spec.params.get("mu", 0.0)
            alpha_hat = proxy_effect(ds, ProxyModel(ProxyKind.EXTERNAL, np.full(ds.n1, mu)))
        else:
            qm = reference_quantiles(ds, m.name, m.budget, method_seed)
            alpha_hat = diff_in_means(ds)
        rep = closed_form_interval(alpha_hat, qm, level)
        (lo, hi), = rep.set.intervals
        if c is not None:
            reject = float(quantile_decision(alpha_hat, c, qm, level))
    elif m.name == "welch":
        lo, hi = welch_interval(ds, m.gamma)
        if c is not None:
            reject = float(not lo <= c <= hi)
    elif m.name == "max_stat":
        yt = ds.y_treated
        rule = appendix_b_rule(yt[0], yt[1], ds.y_control[0], ctx.iota)
        region = rule.region()
        empty = float(region.is_empty)
        covered = float(region.contains(sample.satt))
        length = region.length if not region.is_empty else nan
        if c is not None:
            reject = float(rule.phi(c))
        return covered, reject, empty, length, pval
    if lo is not None:
        covered = float(lo <= sample.satt <= hi)
        empty = 0.0
        length = hi - lo
    return covered, reject, empty, length, pval


_FIELDS = ("covered", "reject", "pvalue", "empty", "length", "satt", "het", "tnoise", "cnoise", "decomp_err")


def _run_chunk(ctx: _Context, start: int, stop: int) -> dict[str, np.ndarray]:
    out = {k: np.empty(stop - start) for k in _FIELDS}
    keys = []
    for j, i in enumerate(range(start, stop)):
        sample = draw(ctx.spec, i)
        cov, rej, emp, length, pval = _evaluate(ctx, sample, (1, i))
        dec = error_decomposition(sample)
        err = (diff_in_means(sample.dataset) - sample.att) - dec.total
        row = (cov, rej, pval, emp, length, sample.satt, dec.heterogeneity, dec.treated_noise, dec.control_noise, err)
        for k, v in zip(_FIELDS, row):
            out[k][j] = v
        keys.append(tuple(sample.alphas.tolist()))
    out["keys"] = keys  # type: ignore[assignment]
    return out


def _run_conditional_chunk(ctx: _Context, start: int, stop: int, inner: int) -> list[tuple[float, int, int]]:
    """For each outer index: (satt, covered count, inner reps) with effects fixed."""
    rows = []
    seed = ctx.spec.seed
    for k in range(start, stop):
        effects = draw_effects(ctx.spec, replication_rng(seed, 2, k))
        hits = 0
        satt = average(effects.alphas)
        for m in range(inner):
            sample = draw_outcomes(ctx.spec, effects, replication_rng(seed, 3, k, m))
            cov, *_ = _evaluate(ctx, sample, (4, k, m))
            hits += int(cov == 1.0)
        rows.append((satt, hits, inner))
    return rows


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("FEWTREAT_THREADS", "1") or 1)
    if workers < 0:
        raise errors.ConfigError("worker count must be non-negative")
    return workers if workers > 0 else (os.cpu_count() or 1)


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    if n == 0:
        return []
    size = max(1, math.ceil(n / (workers * 4)))
    return [(s, min(n, s + size)) for s in range(0, n, size)]


def _map(fn, ctx, ranges, workers, *extra):
    if workers == 1 or len(ranges) <= 1:
        return [fn(ctx, a, b, *extra) for a, b in ranges]
    with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("fork")) as pool:
        futures = [pool.submit(fn, ctx, a, b, *extra) for a, b in ranges]
        return [f.result() for f in futures]


def _rate(x: np.ndarray) -> tuple[float | None, float | None, int]:
    x = x[~np.isnan(x)]
    if x.size == 0:
        return None, None, 0
    p = float(np.count_nonzero(x == 1.0)) / x.size
    return p, math.sqrt(p * (1 - p) / x.size), int(x.size)


def _moments(x: np.ndarray) -> dict[str, float]:
    mean = math.fsum(x) / x.size
    var = math.fsum((x - mean) ** 2) / x.size
    return {"mean": mean, "variance": var}


@dataclass
class SimReport:
    dgp: dict[str, Any]
    method: dict[str, Any]
    replications: int
    unconditional_coverage: float | None
    conditional_coverage: list[dict[str, Any]]
    strata: str
    rejection_rate: float | None
    empty_set_frequency: float | None
    mean_length: float | None
    decomposition_summary: dict[str, Any]
    mc_stderr: float | None
    coverage_mc_stderr: float | None = None
    rejection_mc_stderr: float | None = None
    mean_satt: float | None = None
    att: float | None = None
    conditional_resampling: dict[str, Any] | None = None
    rejection_by_gamma: dict[str, Any] | None = None
    notes: list[str] = field(default_factory=list)
    # per-replication columns, kept only on request and never serialized
    records: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(replace(self, records=None))
        del out["records"]
        return out


def _conditional_table(covered: np.ndarray, satt: np.ndarray, keys: list, discrete: bool, gamma: float):
    ok = ~np.isnan(covered)
    rows = []
    if not ok.any():
        return rows, "none"
    if discrete:
        groups: dict[tuple, list[int]] = {}
        for i in np.flatnonzero(ok):
            groups.setdefault(keys[i], []).append(i)
        for key in sorted(groups):
            idx = np.asarray(groups[key])
            p, se, n = _rate(covered[idx])
            rows.append({"stratum": list(key), "n": n, "coverage": p, "mc_stderr": se})
        return rows, "alpha_pattern"
    edges = np.quantile(satt[ok], np.linspace(0.1, 0.9, 9))
    bins = np.searchsorted(edges, satt, side="right")
    for b in range(10):
        idx = np.flatnonzero(ok & (bins == b))
        if idx.size == 0:
            continue
        p, se, n = _rate(covered[idx])
        rows.append({
            "stratum": f"satt_decile_{b + 1}",
            "satt_range": [float(satt[idx].min()), float(satt[idx].max())],
            "n": n,
            "coverage": p,
            "mc_stderr": se,
        })
    return rows, "satt_decile"


def run(
    spec: DgpSpec,
    method: MethodSpec,
    reps: int,
    workers: int | None = None,
    *,
    conditional: tuple[int, int] | None = None,
    keep_records: bool = False,
) -> SimReport:
    """Run ``reps`` replications of ``method`` on ``spec``.

    ``conditional=(outer, inner)`` additionally estimates coverage given the
    realized effects: ``outer`` effect draws, each followed by ``inner``
    re-draws of everything else. ``keep_records`` attaches the per-replication
    columns (coverage, rejection, SATT, ...) to the report.
    """
    if reps < 1:
        raise errors.ConfigError("reps must be at least 1")
    check_compatible(spec, method)
    workers = resolve_workers(workers)
    iota = method.iota
    if method.name == "max_stat" and iota is None:
        iota = spec.params.get("iota")
        if iota is None:
            iota = appendix_b_iota(method.gamma, 10**6, derived_seed(spec.seed, 5))
    ctx = _Context(spec, method, iota)

    parts = _map(_run_chunk, ctx, _chunks(reps, workers), workers)
    cols = {k: np.concatenate([p[k] for p in parts]) for k in _FIELDS}
    keys = [k for p in parts for k in p["keys"]]

    cov, cov_se, _ = _rate(cols["covered"])
    rej, rej_se, _ = _rate(cols["reject"])
    emp, _, _ = _rate(cols["empty"])
    by_gamma = None
    pvals = cols["pvalue"][~np.isnan(cols["pvalue"])]
    if pvals.size:
        by_gamma = {}
        for g in sorted({*method.report_gammas, method.gamma}):
            r = float(np.count_nonzero(pvals <= g)) / pvals.size
            by_gamma[repr(g)] = {"rate": r, "mc_stderr": math.sqrt(r * (1 - r) / pvals.size)}
    lengths = cols["length"][~np.isnan(cols["length"])]
    table, strata = _conditional_table(cols["covered"], cols["satt"], keys, spec.discrete_effects, method.gamma)
    decomposition = {
        "heterogeneity": _moments(cols["het"]),
        "treated_noise": _moments(cols["tnoise"]),
        "control_noise": _moments(cols["cnoise"]),
        "max_abs_identity_error": float(np.max(np.abs(cols["decomp_err"]))),
    }
    notes = []
    if strata == "satt_decile":
        notes.append("effects are continuous: conditional coverage is reported by deciles of the realized SATT")

    resampled = None
    if conditional is not None and method.name in INTERVAL_METHODS:
        outer, inner = conditional
        if outer < 1 or inner < 1:
            raise errors.ConfigError("conditional resampling needs positive outer and inner counts")
        rows = [r for part in _map(_run_conditional_chunk, ctx, _chunks(outer, workers), workers, inner) for r in part]
        values = np.array([h / n for _, h, n in rows])
        nominal = 1 - method.gamma
        resampled = {
            "outer": outer,
            "inner": inner,
            "strata": [{"satt": s, "coverage": h / n, "n": n} for s, h, n in rows],
            "min": float(values.min()),
            "max": float(values.max()),
            "mean": math.fsum(values) / values.size,
            "share_outside_nominal_pm_0.05": float(np.mean(np.abs(values - nominal) > 0.05)),
            "distinct_values": sorted({float(v) for v in values})[:20],
        }

    return SimReport(
        dgp=spec.to_dict(),
        method=method.to_dict() | ({"iota": iota} if iota is not None else {}),
        replications=reps,
        unconditional_coverage=cov,
        conditional_coverage=table,
        strata=strata,
        rejection_rate=rej,
        empty_set_frequency=emp,
        mean_length=math.fsum(lengths) / lengths.size if lengths.size else None,
        decomposition_summary=decomposition,
        mc_stderr=cov_se if cov is not None else rej_se,
        coverage_mc_stderr=cov_se,
        rejection_mc_stderr=rej_se,
        mean_satt=math.fsum(cols["satt"]) / reps,
        att=spec.att(),
        conditional_resampling=resampled,
        rejection_by_gamma=by_gamma,
        notes=notes,
        records=cols if keep_records else None,
    )
