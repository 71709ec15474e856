from __future__ import annotations

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from onlineselect.analysis import G_function, gronwall_bound
from onlineselect.engine import select_knapsack, select_markwise
from onlineselect.limit_diffusion import cov_limit, cov_limit_quadrature, matrix_exponentials
from onlineselect.rng_core import Scatter, Seed, sample_scatter
from onlineselect.strategies import (BetaPerturbed, FeasibleStationary, Greedy, SelfSimilar, Stationary,
                                     delta_eval, psi)

unit = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False)
nus = st.floats(1.0, 1e6)


@given(nu=nus, t=unit, x=unit, beta=st.floats(-5, 5))
def test_windows_nonnegative_and_feasible(nu, t, x, beta):
    for c in (Greedy(nu), FeasibleStationary(nu), SelfSimilar(nu), SelfSimilar(nu, BetaPerturbed(beta))):
        w = psi(c, t, x)
        assert 0.0 <= w <= 1.0 - x + 1e-15
    assert psi(Stationary(nu), t, x) >= 0


@given(m=st.floats(0, 1e12), beta=st.floats(-10, 10))
def test_delta_in_unit_interval(m, beta):
    assert 0.0 <= delta_eval(BetaPerturbed(beta), m) <= 1.0


@settings(max_examples=30, deadline=None)
@given(nu=st.floats(1.0, 500.0), value=st.integers(0, 2**32), x0=st.floats(0, 0.9))
def test_markwise_path_invariants(nu, value, x0):
    p = select_markwise(SelfSimilar(nu), sample_scatter(nu, seed=Seed(value)), x0)
    assert np.all(np.diff(p.times) > 0) and np.all(np.diff(np.concatenate([[x0], p.marks])) > 0)
    assert p.final_mark <= 1.0 and p.L(1.0) == p.length


@settings(max_examples=30, deadline=None)
@given(nu=st.floats(1.0, 500.0), value=st.integers(0, 2**32))
def test_knapsack_accepts_only_inside_window(nu, value):
    c = SelfSimilar(nu)
    res = sample_scatter(nu, region=((0, 1), (0, 1)), seed=Seed(value))
    p = select_knapsack(c, res)
    if p.length:
        assert np.all(p.increments <= psi(c, p.times, p.X_left(p.times)) + 1e-15)


@settings(max_examples=40, deadline=None)
@given(s=unit, t=unit)
def test_cov_limit_matches_quadrature(s, t):
    s, t = min(s, t), max(s, t)
    assert np.abs(cov_limit(s, t) - cov_limit_quadrature(s, t)).max() < 1e-8


@given(t=st.floats(0, 0.999))
def test_matrix_exponential_inverse(t):
    Ep, Em = matrix_exponentials(t)
    assert np.abs(Ep @ Em - np.eye(2)).max() < 1e-12


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-1, 3), c1=st.floats(0, 2), c2=st.floats(0, 2), k=st.floats(0, 3))
def test_gronwall_monotone_in_source(a, c1, c2, k):
    grid = np.linspace(0, 0.95, 20)
    lo = gronwall_bound(lambda s: c1 * (1 + math.sin(k * s)), a, grid)
    hi = gronwall_bound(lambda s: c1 * (1 + math.sin(k * s)) + c2 * s, a, grid)
    assert np.all(hi >= lo - 1e-9)


@given(b=st.floats(0, 5), t=st.floats(0, 0.999))
def test_G_nonnegative_for_nonnegative_b(b, t):
    assert G_function(b, t) >= -1e-12
