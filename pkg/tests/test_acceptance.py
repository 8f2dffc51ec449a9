"""Acceptance suite: one test per criterion, each at its stated tolerance and
runtime budget. Every test records a one-line verdict, printed at the end of
the session (see ``pytest_terminal_summary`` in conftest.py).
"""

from __future__ import annotations

import itertools
import math
import os
import subprocess
import sys
import time
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from scipy import special

from fewtreat import (
    Dataset,
    Hypothesis,
    Level,
    QuantileModel,
    ScaleFit,
    closed_form_interval,
    empirical_convolution,
    ferman_psi,
    invert_tests,
    quantile_decision,
    run_test,
)
from fewtreat.intervals import default_grid
from fewtreat.quantile_models import NormalQuantileModel
from fewtreat.simulation import DgpSpec, MethodSpec, run

pytestmark = pytest.mark.acceptance

# 10**7-draw Monte Carlo value of the 0.95 quantile of max(|Z1|, |Z2|),
# Var(Z_i) = 2, Cov = 1, from appendix_b_iota(0.05, 10**7, seed=20240607);
# its MC standard error is 0.000785
IOTA_MC_1E7 = 3.128626557384919
IOTA_MC_SE = 0.000785
# root of the bivariate normal CDF equation, as an independent check
IOTA_NUMERIC = 3.1284210609133147

RESULTS: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


_APPENDIX_A: dict = {}


def appendix_a_report():
    """The 100000-replication exhibit, shared by criteria 3 and 7."""
    if not _APPENDIX_A:
        with Timer() as t:
            rep = run(DgpSpec("appendix_a", seed=2024), MethodSpec("normal"), 100_000, keep_records=True)
        _APPENDIX_A.update(report=rep, elapsed=t.elapsed)
    return _APPENDIX_A["report"], _APPENDIX_A["elapsed"]


def test_criterion_01_permutation_exact_validity():
    R = 20_000
    spec = DgpSpec("iid_normal", {"n1": 1, "n0": 19, "alpha": 0.0}, seed=101)
    with Timer() as t:
        rep = run(spec, MethodSpec("perm", 0.05, null_c=0.0, report_gammas=(0.05, 0.10, 0.20)), R)
    parts, ok = [], True
    for g in (0.05, 0.10, 0.20):
        rate = rep.rejection_by_gamma[repr(g)]["rate"]
        bound = g + 3 * math.sqrt(g * (1 - g) / R)
        ok &= rate <= bound
        parts.append(f"gamma={g:.2f}: {rate:.4f} <= {bound:.4f}")
    ok &= t.elapsed < 10
    record(1, ok, f"{'; '.join(parts)}; {t.elapsed:.1f}s (< 10s)")


def test_criterion_02_inversion_matches_closed_form():
    rng = np.random.default_rng(202)
    level = Level(0.05)
    worst, mismatches = 0.0, 0
    with Timer() as t:
        for _ in range(100):
            n0 = int(rng.integers(2, 12))
            n1 = int(rng.integers(1, 4))
            qm = empirical_convolution(rng.standard_t(4, size=n0) * rng.uniform(0.1, 3), n1)
            a = float(rng.normal(0, 3))
            closed = closed_form_interval(a, qm, level).set.intervals[0]
            s = invert_tests(lambda c: quantile_decision(a, c, qm, level), default_grid(a, qm), 1e-9)
            if len(s) != 1:
                mismatches += 1
                continue
            (lo, hi), = s.intervals
            worst = max(worst, abs(lo - closed[0]), abs(hi - closed[1]))
    ok = mismatches == 0 and worst <= 1e-9 and t.elapsed < 5
    record(2, ok, f"100 models, max endpoint gap {worst:.2e} (<= 1e-9), {mismatches} shape mismatches; "
                  f"{t.elapsed:.1f}s (< 5s)")


def test_criterion_03_appendix_a_exhibit():
    rep, elapsed = appendix_a_report()
    cov = rep.unconditional_coverage
    covered = rep.records["covered"] == 1.0
    y0 = rep.records["satt"]  # alpha = Y(0) for the single treated unit
    law = NormalQuantileModel()
    q_lo, q_hi = law.quantile(0.025), law.quantile(0.975)
    inside = (y0 >= q_lo) & (y0 <= q_hi)
    identity_failures = int(np.count_nonzero(covered != inside))
    literal = int(np.count_nonzero(covered != ((y0 >= -1.96) & (y0 <= 1.96))))
    # conditional on the realized effect, coverage is a deterministic 0/1
    with Timer() as t:
        cond = run(DgpSpec("appendix_a", seed=2024), MethodSpec("normal"), 1, conditional=(500, 20))
    values = set(cond.conditional_resampling["distinct_values"])
    ok = (
        abs(cov - 0.95) <= 0.005
        and identity_failures == 0
        and values <= {0.0, 1.0}
        and elapsed < 30
    )
    record(3, ok, f"coverage {cov:.5f} (0.95 +/- 0.005); identity failures {identity_failures}/100000 "
                  f"(vs literal 1.96: {literal}); conditional values {sorted(values)}; "
                  f"{elapsed:.1f}s (< 30s) + {t.elapsed:.1f}s strata check")


def test_criterion_04_appendix_b_exhibit():
    delta, gamma, R = 10.0, 0.05, 50_000
    iota = IOTA_MC_1E7
    oracle = float(2 * special.ndtr(-2 * iota / (math.sqrt(2) * (1 + delta))))
    with Timer() as t:
        rep = run(DgpSpec("appendix_b", {"delta": delta}, seed=404), MethodSpec("max_stat", gamma, iota=iota), R)
    freq = rep.empty_set_frequency
    pinned = abs(IOTA_NUMERIC - IOTA_MC_1E7) <= 3 * IOTA_MC_SE
    ok = freq > gamma and abs(freq - oracle) <= 0.01 and pinned and t.elapsed < 60
    record(4, ok, f"empty frequency {freq:.4f} > {gamma}; oracle {oracle:.4f} (+/- 0.01); iota {iota:.5f} "
                  f"(numeric root {IOTA_NUMERIC:.5f}); {t.elapsed:.1f}s (< 60s)")


def test_criterion_05_conley_taber_asymptotic_size():
    R = 10_000
    rates, ses = [], []
    with Timer() as t:
        for n0 in (50, 500, 2000):
            spec = DgpSpec("iid_normal", {"n1": 1, "n0": n0, "alpha": 0.0}, seed=505)
            rep = run(spec, MethodSpec("ct", 0.05, null_c=0.0), R)
            rates.append(rep.rejection_rate)
            ses.append(rep.rejection_mc_stderr)
    dev = [abs(r - 0.05) for r in rates]
    monotone = all(dev[k + 1] <= dev[k] + 2 * max(ses[k], ses[k + 1]) for k in range(2))
    ok = abs(rates[-1] - 0.05) <= 0.01 and monotone and t.elapsed < 120
    record(5, ok, f"rates at N0=50/500/2000: {', '.join(f'{r:.4f}' for r in rates)}; "
                  f"|rate-0.05| non-increasing within 2 s.e.: {monotone}; {t.elapsed:.1f}s (< 120s)")


def test_criterion_06_realized_effect_conditional_coverage():
    spec = DgpSpec("weather_mixture", {"n1": 2, "n0": 2000, "tau": 2.0, "pi": 0.5, "independent": True}, seed=606)
    with Timer() as t:
        rep = run(spec, MethodSpec("quantile", 0.05), 10_000)
    parts, ok = [], rep.strata == "alpha_pattern"
    for row in rep.conditional_coverage:
        tol = max(0.02, 3 * row["mc_stderr"])
        ok &= abs(row["coverage"] - 0.95) <= tol
        parts.append(f"{tuple(row['stratum'])}: {row['coverage']:.4f} (n={row['n']}, tol {tol:.3f})")
    ok &= t.elapsed < 180
    record(6, ok, f"{'; '.join(parts)}; {t.elapsed:.1f}s (< 180s)")


def test_criterion_07_prediction_vs_realized_asymmetry():
    rep, _ = appendix_a_report()
    outside = [row for row in rep.conditional_coverage if abs(row["coverage"] - 0.95) > 0.05]
    worst = min(rep.conditional_coverage, key=lambda row: row["coverage"])
    ok = abs(rep.unconditional_coverage - 0.95) <= 0.005 and len(outside) >= 1
    record(7, ok, f"unconditional {rep.unconditional_coverage:.4f}; {len(outside)} of "
                  f"{len(rep.conditional_coverage)} SATT deciles outside 0.95 +/- 0.05 "
                  f"(lowest {worst['stratum']}: {worst['coverage']:.4f})")


def test_criterion_08_scale_model_coverage():
    spec = DgpSpec("ferman_scale", {"n1": 2, "n0": 2000, "theta1": 1.0, "theta2": 4.0}, seed=808)
    with Timer() as t:
        het = run(spec, MethodSpec("ferman", 0.05), 5000)
        hom = run(spec, MethodSpec("quantile", 0.05), 5000)
    a, b = het.unconditional_coverage, hom.unconditional_coverage
    direction = "under" if b < 0.95 else "over"
    ok = abs(a - 0.95) <= 0.015 and abs(b - 0.95) > 0.015 and t.elapsed < 300
    record(8, ok, f"scale-model coverage {a:.4f} (0.95 +/- 0.015); homoskedastic {b:.4f} "
                  f"({direction}-covers by {abs(b - 0.95):.4f}); {t.elapsed:.1f}s (< 300s)")


def brute_force_law(residuals, n1):
    counts = Counter()
    for tup in itertools.product(range(len(residuals)), repeat=n1):
        total = 0.0
        for j in tup:
            total = total + residuals[j]
        counts[total / n1] += 1
    n = len(residuals) ** n1
    return {a: Fraction(k, n) for a, k in counts.items()}


def test_criterion_09_quantile_model_oracles():
    rng = np.random.default_rng(909)
    psi_equal = brute_equal = 0
    with Timer() as t:
        for _ in range(50):
            n0 = int(rng.integers(2, 7))
            n1 = int(rng.integers(1, 4))
            res = rng.normal(size=n0)
            conv = empirical_convolution(res, n1)
            psi = ferman_psi(ScaleFit((1.0, 0.0), 0.0, res), np.ones(n1))
            psi_equal += np.array_equal(conv.atoms, psi.atoms) and np.array_equal(conv.weights, psi.weights)
            oracle = brute_force_law(res.tolist(), n1)
            brute_equal += sorted(oracle) == conv.atoms.tolist() and all(
                abs(w - float(oracle[a])) <= 1e-15 for a, w in zip(conv.atoms.tolist(), conv.weights.tolist())
            )
    ok = psi_equal == 50 and brute_equal == 50 and t.elapsed < 5
    record(9, ok, f"psi(h=1) == convolution on {psi_equal}/50; convolution == brute force on {brute_equal}/50; "
                  f"{t.elapsed:.2f}s (< 5s)")


def test_criterion_10_sharp_and_realized_pvalues_identical():
    rng = np.random.default_rng(1010)
    level = Level(0.05)
    same = tags_differ = 0
    with Timer() as t:
        for _ in range(1000):
            n1 = int(rng.integers(1, 4))
            n0 = int(rng.integers(2, 16))
            y = rng.normal(size=n1 + n0) + np.r_[rng.normal(0, 2, n1), np.zeros(n0)]
            ds = Dataset.from_arrays(y, [1] * n1 + [0] * n0)
            c = float(rng.normal(0, 2))
            sharp = run_test(ds, Hypothesis(c, "sharp"), level, "quantile")
            real = run_test(ds, Hypothesis(c, "realized"), level, "quantile")
            same += sharp.p_value == real.p_value and sharp.reject == real.reject
            tags_differ += sharp.valid_under != real.valid_under
    ok = same == 1000 and tags_differ == 1000 and t.elapsed < 5
    record(10, ok, f"identical p-value and decision on {same}/1000; valid_under differs on {tags_differ}/1000; "
                   f"{t.elapsed:.2f}s (< 5s)")


def test_criterion_11_reproducible_across_threads():
    argv = [sys.executable, "-m", "fewtreat.cli", "simulate", "--dgp", "weather_mixture",
            "--param", "n0=60", "--method", "quantile", "--reps", "300", "--budget", "3000",
            "--seed", "1111", "--cond-outer", "16", "--cond-inner", "5"]
    outputs = {}
    for threads in ("1", "4", "16"):
        env = {**os.environ, "FEWTREAT_THREADS": threads}
        proc = subprocess.run(argv, capture_output=True, env=env, check=True)
        outputs[threads] = proc.stdout
    ok = len(set(outputs.values())) == 1 and len(outputs["1"]) > 0
    record(11, ok, f"FEWTREAT_THREADS 1/4/16 -> {len(set(outputs.values()))} distinct output(s), "
                   f"{len(outputs['1'])} bytes")
