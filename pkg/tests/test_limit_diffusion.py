from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from onlineselect.limit_diffusion import (A, SIGMA, LimitConstants, aux_covariances, cov_limit,
                                          cov_limit_quadrature, covariance_table, factorization_margin,
                                          identity_checks, matrix_exponentials, sample_limit_path,
                                          sample_limit_paths)
from onlineselect.rng_core import Seed

R2 = math.sqrt(2)


def test_constants_consistent():
    c = LimitConstants()
    assert c.rho == pytest.approx(c.sigma2 / c.sigma1, rel=1e-14)
    assert np.allclose(c.Sigma, SIGMA, rtol=1e-14)
    assert np.linalg.eigvalsh(SIGMA).min() > 0


def test_drift_matrix_idempotent():
    assert np.array_equal(A @ A, A)


def test_matrix_exponentials():
    Ep, Em = matrix_exponentials(0.0)
    assert np.array_equal(Ep, np.eye(2)) and np.array_equal(Em, np.eye(2))
    Ep, _ = matrix_exponentials(0.5)
    assert np.allclose(Ep, [[0.5, 0.0], [-0.25, 1.0]])
    for t in (0.1, 0.5, 0.9, 0.999):
        Ep, Em = matrix_exponentials(t)
        assert np.abs(Ep @ Em - np.eye(2)).max() < 1e-12
    with pytest.raises(ValueError):
        matrix_exponentials(1.0)


def test_matrix_exponential_solves_linear_ode():
    # d/dt e^{a(t)} = -A/(1-t) e^{a(t)}
    t, h = 0.4, 1e-6
    d = (matrix_exponentials(t + h)[0] - matrix_exponentials(t - h)[0]) / (2 * h)
    assert np.allclose(d, -A / (1 - t) @ matrix_exponentials(t)[0], atol=1e-8)


def test_cov_limit_corners():
    assert np.array_equal(cov_limit(0.0, 0.0), np.zeros((2, 2)))
    assert np.allclose(cov_limit(1.0, 1.0), [[0, 0], [0, R2 / 6]], atol=1e-15)
    with pytest.raises(ValueError):
        cov_limit(0.7, 0.3)


def test_cov_limit_matches_quadrature():
    assert np.abs(cov_limit(0.3, 0.7) - cov_limit_quadrature(0.3, 0.7)).max() < 1e-8


def test_cov_limit_continuous_at_one():
    assert np.allclose(cov_limit(1 - 1e-12, 1.0), cov_limit(1.0, 1.0), atol=1e-9)
    assert np.allclose(cov_limit(0.4, 1 - 1e-13), cov_limit(0.4, 1.0), atol=1e-9)


def test_bridge_variance():
    s = np.linspace(0, 1, 21)
    top = np.array([cov_limit(x, x)[0, 0] for x in s])
    assert np.allclose(top, 2 * R2 / 3 * s * (1 - s))


def test_covariance_table_covers_pairs():
    grid = np.linspace(0, 1, 6)
    table = covariance_table(grid)
    assert len(table) == 21
    assert all(s <= t and np.array_equal(C, cov_limit(s, t)) for s, t, C in table)


def test_cross_covariance_not_symmetric():
    # E Y1(s) Y2(t) and E Y2(s) Y1(t) differ, so the full transpose relation carries information
    C = cov_limit(0.2, 0.6)
    assert C[0, 1] != pytest.approx(C[1, 0])


def test_non_markov_margin():
    # frozen closed-form value of the product margin for Y2 at (0.2, 0.5, 0.8)
    assert factorization_margin(0.2, 0.5, 0.8) == pytest.approx(5.850088453550e-4, rel=1e-9)
    assert factorization_margin(0.2, 0.5, 0.8, scale="correlation") > 1e-3
    # the bridge component is Markov
    assert abs(factorization_margin(0.2, 0.5, 0.8, entry=(0, 0))) < 1e-14


def test_limit_path_endpoints():
    g = sample_limit_path(np.linspace(0, 1, 11), Seed(0))
    assert g["Y1"][0] == 0 and g["Y2"][0] == 0 and g["Y1"][-1] == 0


def test_sampler_rejects_bad_grid():
    with pytest.raises(ValueError):
        sample_limit_paths(np.array([0.1, 1.0]), 10)


@pytest.fixture(scope="module")
def limit_paths():
    grid = np.array([0.0, 0.3, 0.5, 0.7, 1.0])
    return grid, sample_limit_paths(grid, 100_000, Seed(3))


def test_bridge_variance_mc(limit_paths):
    _, d = limit_paths
    y = d["Y1"][:, 2]
    v = y.var(ddof=1)
    assert abs(v - 2 * R2 / 3 * 0.25) < 3 * v * math.sqrt(2 / (y.size - 1))


def _cov_se(a, b):
    p = (a - a.mean()) * (b - b.mean())
    return p.mean(), p.std(ddof=1) / math.sqrt(a.size)


def test_cross_covariance_mc(limit_paths):
    _, d = limit_paths
    c, se = _cov_se(d["Y1"][:, 1], d["Y2"][:, 3])
    assert abs(c - cov_limit(0.3, 0.7)[0, 1]) < 3 * se


def test_all_pairs_mc(limit_paths):
    grid, d = limit_paths
    Y = (d["Y1"], d["Y2"])
    hits = total = 0
    for a in range(1, grid.size):
        for b in range(a, grid.size):
            C = cov_limit(grid[a], grid[b])
            for i in range(2):
                for j in range(2):
                    if C[i, j] == 0:
                        continue
                    c, se = _cov_se(Y[i][:, a], Y[j][:, b])
                    hits += abs(c - C[i, j]) < 3 * se
                    total += 1
    assert hits >= 0.95 * total


def test_marginals_gaussian(limit_paths):
    _, d = limit_paths
    for k in (1, 2, 3):
        for y in (d["Y1"][:20_000, k], d["Y2"][:20_000, k]):
            assert stats.normaltest(y).pvalue > 0.01


def test_aux_covariances():
    assert aux_covariances(0.0) == {"cov_y1_w1": 0.0, "var_y1_minus_w1": 0.0}
    a = aux_covariances(1.0)
    assert a["cov_y1_w1"] == 0.0 and a["var_y1_minus_w1"] == pytest.approx(2 * R2 / 3)


def test_aux_covariances_mc():
    d = sample_limit_paths(np.array([0.0, 0.5]), 100_000, Seed(4))
    y, w = d["Y1"][:, 1], d["W1"][:, 1]
    a = aux_covariances(0.5)
    c, se = _cov_se(y, w)
    assert abs(c - a["cov_y1_w1"]) < 3 * se
    r = y - w
    v = r.var(ddof=1)
    assert abs(v - a["var_y1_minus_w1"]) < 3 * v * math.sqrt(2 / (r.size - 1))


def test_identity_checks():
    rep = identity_checks(100_000, Seed(5))
    assert rep.algebraic_error < 1e-12
    assert 0.97 <= rep.empirical_ratio <= 1.03
    S = SIGMA
    assert 4 * S[1, 1] + S[0, 0] - 4 * S[0, 1] == pytest.approx(2 * R2 / 3, abs=1e-12)
