"""The ten acceptance criteria, each reported as one PASS/FAIL line.

Seeds were fixed before the first run and are not tuned.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.interpolate import PchipInterpolator
from scipy.special import gammaln

from conftest import ACCEPTANCE_LINES
from sacbayes import analysis, protocol, scoring
from sacbayes.diagnostics import batch_means_se
from sacbayes.mcmc import ChainConfig, run_chain, run_group
from sacbayes.model import (
    RHO_MAX,
    RHO_MIN,
    THETA_MAX,
    THETA_MIN,
    Hyperparams,
    TestDesign,
    forward_simulate,
    log_betabinomial,
    polar_log_density,
)

GOLDEN = Path(__file__).parent / "golden"
HYPER = Hyperparams()

pytestmark = pytest.mark.slow


def report(number, ok, detail, elapsed, limit):
    fast = elapsed < limit
    passed = bool(ok) and fast
    line = (f"{'PASS' if passed else 'FAIL'} C{number}: {detail} "
            f"[{elapsed:.2f} s, limit {limit:g} s]")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
    assert fast, line


PROPER_RULES = ["log", "quadratic", "asymmetric", "scaled-asymmetric", "combined"]


def test_c1_properness():
    t0 = time.perf_counter()
    worst = 0.0
    for name in PROPER_RULES:
        rule = scoring.get_rule(name)
        for p in np.round(np.arange(0.05, 0.951, 0.05), 2):
            worst = max(worst, abs(scoring.optimal_report(rule, p, 1001) - p))
    ok = worst <= 1e-3 + 1e-12
    report(1, ok, f"max |q* - p| = {worst:.2e} over 5 rules x 19 p (one step = 1e-3)",
           time.perf_counter() - t0, 1.0)


def test_c2_foster():
    t0 = time.perf_counter()
    rule = scoring.foster_rule()
    grid = np.linspace(0, 1, 1001)[1:-1]
    above = [scoring.optimal_report(rule, p) for p in grid if p > 0.5]
    below = [scoring.optimal_report(rule, p) for p in grid if p < 0.5]
    ok = all(q == 1.0 for q in above) and all(q == 0.0 for q in below)
    report(2, ok, f"optimal report 1.0 for {len(above)} p > 1/2 and 0.0 for {len(below)} p < 1/2: "
                  f"{sorted(set(above))} / {sorted(set(below))}", time.perf_counter() - t0, 1.0)


def _random_symmetric_weight(rng):
    c0 = rng.uniform(0.1, 3.0)
    coeffs = rng.uniform(0.0, 2.0, size=rng.integers(1, 5))

    def m(t):
        u = t * (1 - t)
        return c0 + sum(c * u ** (k + 1) for k, c in enumerate(coeffs))

    return m


def _random_derivative(rng):
    knots = rng.uniform(0.05, 3.0, size=rng.integers(2, 6))
    return PchipInterpolator(np.linspace(0, 1, knots.size), knots)


def test_c3_reward_for_accuracy():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    sym_half, sym_full = [], []
    for _ in range(20):
        rule = scoring.build_symmetric_family(_random_symmetric_weight(rng))
        sym_half.append(scoring.check_C2(rule, 0.5).passed)
        sym_full.append(scoring.check_C2(rule, 0.0).passed)
    asym = []
    for _ in range(20):
        f_deriv = _random_derivative(rng)
        rule = scoring.build_asymmetric_family(f_deriv, scoring.min_asymmetric_offset(f_deriv) + 0.1)
        asym.append(scoring.check_C2(rule, 0.0).passed)
    ok = all(sym_half) and all(asym) and not any(sym_full)
    report(3, ok, f"symmetric on (1/2,1) {sum(sym_half)}/20, asymmetric on (0,1) {sum(asym)}/20, "
                  f"symmetric on (0,1) failing {20 - sum(sym_full)}/20", time.perf_counter() - t0, 10.0)


def _betabinomial_tanh_sinh(n, N, a, b, points=10_000):
    # p = logistic(pi sinh t) removes the endpoint singularities of p^(a-1)(1-p)^(b-1)
    t = np.linspace(-6.5, 6.5, points)
    s = math.pi * np.sinh(t)
    log_p, log_q = -np.logaddexp(0, -s), -np.logaddexp(0, s)
    log_jac = math.log(math.pi) + np.log(np.cosh(t)) + log_p + log_q
    log_comb = gammaln(N + 1) - gammaln(n + 1) - gammaln(N - n + 1)
    log_beta = gammaln(a) + gammaln(b) - gammaln(a + b)
    ell = log_comb - log_beta + (n + a - 1) * log_p + (N - n + b - 1) * log_q + log_jac
    peak = ell.max()
    return peak + math.log(np.exp(ell - peak).sum() * (t[1] - t[0]))


def test_c4_collapse_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        N = int(rng.integers(0, 51))
        n = int(rng.integers(0, N + 1))
        a, b = rng.uniform(0.1, 20.0, size=2)
        worst = max(worst, abs(log_betabinomial(n, N, a, b) - _betabinomial_tanh_sinh(n, N, a, b)))
    report(4, worst <= 1e-8, f"max |error| = {worst:.2e} over 100 tuples (tolerance 1e-8)",
           time.perf_counter() - t0, 5.0)


def _fixed_k_oracle(n, N, points=400):
    r = np.linspace(RHO_MIN, RHO_MAX, points + 1)
    t = np.linspace(THETA_MIN, THETA_MAX, points + 1)
    R, T = np.meshgrid(0.5 * (r[1:] + r[:-1]), 0.5 * (t[1:] + t[:-1]), indexing="ij")
    a, b = np.exp(R) * np.cos(T), np.exp(R) * np.sin(T)
    ell = polar_log_density(R, T, HYPER) + sum(log_betabinomial(x, N, a, b) for x in n)
    w = np.exp(ell - ell.max())
    w /= w.sum()
    return np.array([float((w * (a + x) / (a + b + N)).sum()) for x in n])


def test_c5_fixed_k_exactness():
    t0 = time.perf_counter()
    n, N = np.array([1, 4]), 5
    oracle = _fixed_k_oracle(n, N)
    gs, _ = run_group(n, N, HYPER, ChainConfig(n_samples=50_000, burn_in=1_000, seed=5, k_max=1))
    means = gs.p.mean(axis=0)
    se = np.array([batch_means_se(gs.p[:, u]) for u in range(n.size)])
    z = np.abs(means - oracle) / se
    ok = bool(np.all(z < 3)) and bool(np.all(gs.K == 1))
    detail = "; ".join(f"p{u + 1}: chain {means[u]:.5f} vs grid {oracle[u]:.5f} (z = {z[u]:.2f})"
                       for u in range(n.size))
    report(5, ok, detail + " (need z < 3)", time.perf_counter() - t0, 120.0)


def test_c6_prior_recovery():
    t0 = time.perf_counter()
    gs, _ = run_group(np.zeros(5, dtype=np.int64), 0, HYPER,
                      ChainConfig(n_samples=20_000, burn_in=1_000, seed=6))
    parts, ok = [], True
    for k in range(1, 6):
        ind = (gs.K == k).astype(float)
        target = (1 - HYPER.lam) * HYPER.lam ** (k - 1)
        se = batch_means_se(ind)
        z = abs(ind.mean() - target) / se if se > 0 else math.inf
        ok &= z <= 3
        parts.append(f"K={k}: {ind.mean():.4f} vs {target:.4f} (z = {z:.2f})")
    report(6, ok, "; ".join(parts) + " over 20000 sweeps", time.perf_counter() - t0, 300.0)


def test_c7_induced_prior():
    t0 = time.perf_counter()
    rep, _ = protocol.end_to_end_prior_check(seed=20261016, students=70, n_samples=10_000, burn_in=1_000)
    detail = " | ".join(rep.lines())
    report(7, rep.passed, detail, time.perf_counter() - t0, 600.0)


def test_c8_synthetic_truth_coverage():
    t0 = time.perf_counter()
    design = TestDesign({(1, 1): 50})
    dataset, truth = forward_simulate(HYPER, design, {(1, 1): 70}, seed=8)
    samples = run_chain(dataset, HYPER, ChainConfig(n_samples=4_000, burn_in=1_000, seed=8))
    lattice, lo, hi = analysis.cdf_band(samples, 1, 1, 1, mass=0.95)
    coverage = analysis.band_coverage(truth[(1, 1, 1)].p, lattice, lo, hi)
    report(8, coverage >= 0.9, f"true class CDF inside 95% band at {coverage:.1%} of {lattice.size} "
                               f"points (need >= 90%)", time.perf_counter() - t0, 300.0)


def test_c9_table_structure(tmp_path):
    t0 = time.perf_counter()
    dataset, _ = protocol.simulate(HYPER, seed=9, students=13, schools=2, marks=20)
    samples = run_chain(dataset, HYPER, ChainConfig(n_samples=200, burn_in=50, seed=9))
    problems = []
    for query, labels in [("whole", ["whole"]), ("halves", ["a", "b"]), ("quartiles", list("abcd"))]:
        table = analysis.comparison_table(samples, samples, [1, 2], query)
        path = tmp_path / f"table_{query}.csv"
        analysis.write_comparison_csv(table, path)
        lines = path.read_text().splitlines()
        golden = (GOLDEN / f"table_{query}.header").read_text().strip()
        if lines[0] != golden:
            problems.append(f"{query}: header {lines[0]!r}")
        if [r.label for r in table[0]] != labels or len(lines) != 3:
            problems.append(f"{query}: labels or row count")
        for line in lines[1:]:
            cells = line.split(",")
            probs = [float(c) for c in cells[1:1 + len(labels)]]
            if len(cells) != 1 + 2 * len(labels) or not all(0 <= p <= 1 for p in probs):
                problems.append(f"{query}: malformed row {line!r}")
    report(9, not problems, "whole / a-b / a-d tables match golden headers" if not problems
           else "; ".join(problems), time.perf_counter() - t0, 300.0)


def test_c10_sabotage():
    t0 = time.perf_counter()
    rep = scoring.sabotage_threshold()
    text = rep.summary()
    # independent brute force on the combined rule's own payoffs
    rule = scoring.combined_rule()
    p = np.linspace(0, 1, 10001)[1:-1]
    truthful = p * rule.right(p) + (1 - p) * rule.wrong(p)
    brute = float(p[rule.wrong(0.0) > truthful].max())
    ok = rep.threshold == brute and "0.2" in text and "DISCREPANCY" in text
    report(10, ok, text, time.perf_counter() - t0, 1.0)
