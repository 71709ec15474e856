"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (or execute this file); the
summary lines appear at the end of the session.
"""
from __future__ import annotations

import math
import sys
import time

import numpy as np
import pytest
from scipy import stats

from conftest import record
from onlineselect.analysis import (G_function, small_b_coefficient, audit_general_inequalities, audit_pq_bounds, c_plus,
                                   empirical_cov, estimate_moments, feasible_stationary_limit_check,
                                   remainder_scan, two_sample_ks)
from onlineselect.engine import majorant_path, sandwich, simulate
from onlineselect.limit_diffusion import (cov_limit, cov_limit_quadrature, factorization_margin,
                                          identity_checks, matrix_exponentials)
from onlineselect.rng_core import Seed
from onlineselect.strategies import FeasibleStationary, SelfSimilar, Stationary, calibrate_beta

SIGMA1_SQ = 2 * math.sqrt(2) / 3
END = np.array([0.0, 1.0])


def test_criterion_01_stationary_exactness():
    nu, reps = 1e4, 10_000
    start = time.perf_counter()
    ens = simulate(Stationary(nu), reps, seed=101, grid=END, keep_paths=False)
    elapsed = time.perf_counter() - start
    X1, L1 = ens.X[:, -1], ens.L[:, -1]
    lam = math.sqrt(2 * nu)
    mean_ok = abs(L1.mean() - lam) < 3 * L1.std(ddof=1) / math.sqrt(reps)
    var_ok = abs(L1.var(ddof=1) / lam - 1) < 0.05
    rep = estimate_moments(ens)
    target = 2 ** 1.5 / (3 * math.sqrt(nu))
    vx_ok = abs(rep.var_X[-1] - target) < 3 * rep.se_var_X[-1]
    ok = mean_ok and var_ok and vx_ok and elapsed <= 120
    record(1, ok, f"E L(1)={L1.mean():.3f} Var L(1)={L1.var(ddof=1):.2f} (target {lam:.3f}); "
                  f"Var X(1)={rep.var_X[-1]:.6f}±{rep.se_var_X[-1]:.6f} (target {target:.6f}); {elapsed:.1f}s")
    assert ok


def test_criterion_02_engine_equivalence():
    nu, reps = 100.0, 10_000
    c = SelfSimilar(nu)
    a = simulate(c, reps, seed=102, grid=END, keep_paths=False)
    b = simulate(c, reps, seed=Seed(102, 1 << 20), grid=END, keep_paths=False, method="markwise")
    kl = two_sample_ks(a.L[:, -1], b.L[:, -1])
    kx = two_sample_ks(a.X[:, -1], b.X[:, -1])
    ok = kl.p_value > 0.01 and kx.p_value > 0.01
    record(2, ok, f"KS p-values: L(1) {kl.p_value:.3f}, X(1) {kx.p_value:.3f}")
    assert ok


def test_criterion_03_sandwich():
    nu, reps = 1e4, 1000
    c = SelfSimilar(nu)
    bc = calibrate_beta(c)
    res = [sandwich(c, bc, Seed(103, r)) for r in range(reps)]
    held = sum(r.ok for r in res)
    lo = min(r.lower_margin for r in res)
    up = min(r.upper_margin for r in res)
    ok = held == reps
    record(3, ok, f"X_down <= X <= X_up in {held}/{reps} replicates (min margins {lo:.3g}, {up:.3g})")
    assert ok


def test_criterion_04_reflected_limit_law():
    nu, reps = 1e4, 10_000
    bc = calibrate_beta(SelfSimilar(nu))
    z = np.array([nu ** 0.25 * (majorant_path(nu, bc, Seed(104, r)).X(1.0) - 1) for r in range(reps)])
    ks = stats.kstest(z, stats.halfnorm(scale=math.sqrt(SIGMA1_SQ)).cdf)
    ok = ks.pvalue > 0.01
    record(4, ok, f"KS D={ks.statistic:.3f} p={ks.pvalue:.2g}; mean {z.mean():.3f} vs "
                  f"{math.sqrt(SIGMA1_SQ * 2 / math.pi):.3f}; offset K nu^(-1/4)={bc.K / nu ** 0.25:.3f}")
    assert ok


def test_criterion_05_bridge_covariance(optimal_1e5):
    pts = (0.25, 0.5, 0.75)
    worst, ok = 0.0, True
    for i, s in enumerate(pts):
        for t in pts[i:]:
            pair = empirical_cov(optimal_1e5, s, t, ("X~", "X~"))
            z = (pair.cov - SIGMA1_SQ * s * (1 - t)) / pair.se
            worst = max(worst, abs(z))
            ok &= abs(z) < 3
    record(5, ok, f"max |z| over 6 pairs = {worst:.2f}")
    assert ok


def test_criterion_06_length_variance(optimal_1e5):
    v = optimal_1e5.L_tilde[:, -1].var(ddof=1)
    target = math.sqrt(2) / 6
    ok = abs(v / target - 1) < 0.10
    record(6, ok, f"Var L~(1) = {v:.4f} vs {target:.4f} ({100 * (v / target - 1):+.1f}%)")
    assert ok


def test_criterion_07_remainder_bounded():
    nus = [1e3, 1e4, 1e5]
    means, ses = [], []
    for k, nu in enumerate(nus):
        L1 = simulate(SelfSimilar(nu), 10_000, seed=107 + k, grid=END, keep_paths=False).L[:, -1]
        means.append(L1.mean())
        ses.append(L1.std(ddof=1) / math.sqrt(L1.size))
    scan = remainder_scan(nus, means, ses)
    ok = scan.slack_adjusted_diff < 0.5
    r = ", ".join(f"{v:.3f}±{s:.3f}" for v, s in zip(scan.r, scan.se))
    record(7, ok, f"r = [{r}]; max |dr| = {scan.max_pairwise_diff:.3f}, "
                  f"after 3-SE slack {scan.slack_adjusted_diff:.3f}")
    assert ok


def test_criterion_08_closed_form_oracle():
    rng = np.random.default_rng(108)
    err = 0.0
    for s, t in np.sort(rng.random((100, 2)), axis=1):
        err = max(err, np.abs(cov_limit(s, t) - cov_limit_quadrature(s, t)).max())
    inv = max(np.abs(np.matmul(*matrix_exponentials(t)) - np.eye(2)).max() for t in rng.random(100))
    ok = err < 1e-8 and inv < 1e-12
    record(8, ok, f"max |closed - quadrature| = {err:.2e}; max inverse error = {inv:.2e}")
    assert ok


def test_criterion_09_brownian_identity():
    rep = identity_checks(100_000, Seed(109))
    ok = rep.algebraic_error < 1e-12 and 0.97 <= rep.empirical_ratio <= 1.03
    record(9, ok, f"algebraic error {rep.algebraic_error:.1e}; variance ratio {rep.empirical_ratio:.4f}")
    assert ok


def test_criterion_10_feasible_stationary_limit():
    ens = simulate(FeasibleStationary(1e5), 10_000, seed=110, grid=END, keep_paths=False)
    rep = feasible_stationary_limit_check(ens, 100_000, Seed(110))
    ok = rep.ks.statistic < 0.05 and rep.nonpositive
    record(10, ok, f"KS distance {rep.ks.statistic:.4f}; max X~(1) = {rep.max_X_tilde_1:.3g}")
    assert ok


def test_criterion_11_bound_audits(optimal_1e4):
    rep = estimate_moments(optimal_1e4)
    bc = calibrate_beta(optimal_1e4.control)
    bounds = {a.bound_name: a for a in audit_pq_bounds(rep, bc)}
    general = audit_general_inequalities(rep)
    sign_ok = bc.beta_plus == 0 and bounds["p-up"].passed and bounds["q-up"].passed
    general_ok = all(a.passed for a in general)
    h, ts = 1e-4, np.linspace(0.1, 0.9, 9)
    f = lambda b: (G_function(b, ts) - 2 * b * ts) / b ** 2
    asym = float(np.abs(2 * f(h) - f(2 * h) - small_b_coefficient(ts)).max())
    cp, tp = c_plus()
    g_ok = asym < 1e-6 and abs(cp - (2 - math.sqrt(3))) < 1e-6 and abs(tp - (1 - 1 / math.sqrt(3))) < 1e-6
    ok = sign_ok and general_ok and g_ok
    failed = [a.bound_name for a in general if not a.passed]
    record(11, ok, f"p-t<=0, q-t<=0: {sign_ok}; general inequalities failed: {failed or 'none'}; "
                   f"G b^2-coefficient error {asym:.1e}; c+ = {cp:.9f} at t = {tp:.7f}")
    assert ok


def test_criterion_12_non_markov_witness():
    m = factorization_margin(0.2, 0.5, 0.8)
    corr = factorization_margin(0.2, 0.5, 0.8, scale="correlation")
    ok = abs(m) > 1e-3
    record(12, ok, f"product margin {m:.3e} (threshold 1e-3); correlation-scale margin {corr:.3e}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
