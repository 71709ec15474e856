"""The Gaussian limit (Y1, Y2) of the normalised running maximum and length.

    dY1 = -Y1/(1-t) dt + dW1,   dY2 = -Y1/(2(1-t)) dt + dW2,

with W a correlated Brownian motion of covariance SIGMA per unit time.  Y1 is
a Brownian bridge and Y2 = Y1/2 - W1/2 + W2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import xlogy

from .processes import GridSeries
from .rng_core import BROWNIAN, Seed, sample_correlated_bm, sqrt_factor

SIGMA1 = 2 ** 0.75 / math.sqrt(3)
SIGMA2 = 2 ** -0.25
RHO = math.sqrt(3) / 2
SIGMA = np.array([[2 * math.sqrt(2) / 3, 1 / math.sqrt(2)],
                  [1 / math.sqrt(2), 1 / math.sqrt(2)]])
A = np.array([[1.0, 0.0], [0.5, 0.0]])


@dataclass(frozen=True)
class LimitConstants:
    sigma1: float = SIGMA1
    sigma2: float = SIGMA2
    rho: float = RHO

    @property
    def Sigma(self) -> np.ndarray:
        s12 = self.rho * self.sigma1 * self.sigma2
        return np.array([[self.sigma1 ** 2, s12], [s12, self.sigma2 ** 2]])


def matrix_exponentials(t: float) -> tuple[np.ndarray, np.ndarray]:
    """exp(a(t)) = I - tA and exp(-a(t)) = I + t/(1-t) A, with a(t) = A log(1-t)."""
    if t >= 1:
        raise ValueError("exp(-a(t)) is singular at t = 1")
    I = np.eye(2)
    return I - t * A, I + (t / (1 - t)) * A


def _log1m(s: float) -> float:
    return math.log1p(-s) if s < 1 else -math.inf


def _xlog1m(s: float) -> float:
    """(1-s) log(1-s), continuous at s = 1."""
    return float(xlogy(1 - s, 1 - s))


def cov_limit(s: float, t: float) -> np.ndarray:
    """Cross-covariance E{Y(s)^T Y(t)} for 0 <= s <= t <= 1; entry (i, j) = E Y_i(s) Y_j(t)."""
    if not (0 <= s <= t <= 1):
        raise ValueError(f"need 0 <= s <= t <= 1, got s={s}, t={t}")
    r2 = math.sqrt(2)
    xl = _xlog1m(s)
    # (1-t) log(1-s) and (2-s-t) log(1-s): split off (1-s) log(1-s) so s -> 1 stays finite
    lt = 0.0 if s == 0 else (1 - t) * _log1m(s) if s < 1 else 0.0
    c11 = 2 * r2 * s * (1 - t) / 3
    c12 = (2 * s * (1 - t) - xl) / (3 * r2)
    c21 = (2 * s * (1 - t) - lt) / (3 * r2)
    c22 = (2 * s * (2 - t) - xl - lt) / (6 * r2)
    return np.array([[c11, c12], [c21, c22]])


def cov_limit_quadrature(s: float, t: float, tol: float = 1e-13) -> np.ndarray:
    """Ito-isometry integral int_0^s e^{a(s)-a(u)} SIGMA e^{(a(t)-a(u))^T} du, entrywise by quad."""
    if not (0 <= s <= t <= 1):
        raise ValueError(f"need 0 <= s <= t <= 1, got s={s}, t={t}")
    Es = np.eye(2) - s * A
    Et = np.eye(2) - t * A

    def integrand(u, i, j):
        Em = np.eye(2) + (u / (1 - u)) * A
        return (Es @ Em @ SIGMA @ (Et @ Em).T)[i, j]

    out = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            out[i, j] = integrate.quad(integrand, 0, s, args=(i, j), epsabs=tol, epsrel=1e-12, limit=200)[0]
    return out


def var_Y2(t: float) -> float:
    return float(cov_limit(t, t)[1, 1])


def aux_covariances(t: float) -> dict:
    """Cov(Y1(t), W1(t)) and Var(Y1(t) - W1(t))."""
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    s1sq = SIGMA1 ** 2
    xl = _xlog1m(t)
    return {"cov_y1_w1": -s1sq * xl,
            "var_y1_minus_w1": 4 * math.sqrt(2) / 3 * (t - t * t / 2 + xl)}


def _interval_cov(a: float, b: float) -> np.ndarray:
    """Joint covariance of (dW1, dW2, dI) over (a, b], I(t) = int_0^t dW1/(1-s), b < 1."""
    h = b - a
    ell = math.log((1 - a) / (1 - b))
    v = 1 / (1 - b) - 1 / (1 - a)
    S = SIGMA
    return np.array([[S[0, 0] * h, S[0, 1] * h, S[0, 0] * ell],
                     [S[0, 1] * h, S[1, 1] * h, S[0, 1] * ell],
                     [S[0, 0] * ell, S[0, 1] * ell, S[0, 0] * v]])


def sample_limit_paths(grid, reps: int, seed: Seed = Seed(0)) -> dict[str, np.ndarray]:
    """Exact samples of (Y1, Y2, W1, W2) on a grid, arrays of shape (reps, len(grid)).

    Y1 uses exact bridge transitions: over each interval the Brownian
    increments and the increment of int dW1/(1-s) are drawn jointly, so there
    is no time-discretisation error; Y1(1) = 0 exactly.  Y2 follows from
    Y2 = Y1/2 - W1/2 + W2.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid[0] != 0 or np.any(np.diff(grid) <= 0) or grid[-1] > 1:
        raise ValueError("grid must be increasing, start at 0 and stay within [0, 1]")
    rng = seed.generator(BROWNIAN)
    n = grid.size
    W = np.zeros((reps, n, 2))
    Y1 = np.zeros((reps, n))
    Wf = sqrt_factor(SIGMA)
    for k in range(n - 1):
        a, b = grid[k], grid[k + 1]
        if b < 1:
            F = sqrt_factor(_interval_cov(a, b))
            z = rng.standard_normal((reps, 3)) @ F.T
            W[:, k + 1] = W[:, k] + z[:, :2]
            Y1[:, k + 1] = Y1[:, k] * (1 - b) / (1 - a) + (1 - b) * z[:, 2]
        else:
            z = rng.standard_normal((reps, 2)) @ Wf.T * math.sqrt(b - a)
            W[:, k + 1] = W[:, k] + z
            Y1[:, k + 1] = 0.0
    W1, W2 = W[..., 0], W[..., 1]
    return {"Y1": Y1, "Y2": Y1 / 2 - W1 / 2 + W2, "W1": W1, "W2": W2}


def sample_limit_path(grid, seed: Seed = Seed(0)) -> GridSeries:
    d = sample_limit_paths(grid, 1, seed)
    labels = ("Y1", "Y2", "W1", "W2")
    return GridSeries(np.asarray(grid, dtype=float), np.column_stack([d[k][0] for k in labels]), labels)


def covariance_table(grid) -> list[tuple[float, float, np.ndarray]]:
    """cov_limit for every pair s <= t of grid points."""
    grid = np.asarray(grid, dtype=float)
    return [(s, t, cov_limit(s, t)) for i, s in enumerate(grid) for t in grid[i:]]


def factorization_margin(s: float, t: float, u: float, entry=(1, 1), scale: str = "raw") -> float:
    """K(s,u)K(t,t) - K(s,t)K(t,u) for the scalar covariance K of one component.

    A centred Gaussian Markov process with nonvanishing variance has margin 0
    for every s <= t <= u.  With ``scale="correlation"`` the same test is made
    on correlations, r(s,u) - r(s,t) r(t,u), which does not depend on the
    size of the variances.
    """
    if not s <= t <= u:
        raise ValueError("need s <= t <= u")
    i, j = entry

    def K(a, b):
        return cov_limit(a, b)[i, j]

    if scale == "raw":
        return K(s, u) * K(t, t) - K(s, t) * K(t, u)
    if scale == "correlation":
        def r(a, b):
            return K(a, b) / math.sqrt(K(a, a) * K(b, b))
        return r(s, u) - r(s, t) * r(t, u)
    raise ValueError(f"unknown scale {scale!r}")


@dataclass(frozen=True)
class IdentityReport:
    algebraic_error: float
    empirical_ratio: float
    reps: int


def identity_checks(reps: int = 100_000, seed: Seed = Seed(0), t: float = 1.0) -> IdentityReport:
    """Var(2 W2 - W1)(t) against Var W1(t): algebraically from SIGMA and by simulation."""
    S = SIGMA
    lhs = 4 * S[1, 1] - 4 * S[0, 1] + S[0, 0]
    err = abs(lhs - S[0, 0])
    if t == 0:
        return IdentityReport(err, 1.0, reps)
    W = sample_correlated_bm(np.array([0.0, t]), S, seed, reps=reps)[:, -1, :]
    ratio = np.var(2 * W[:, 1] - W[:, 0], ddof=1) / np.var(W[:, 0], ddof=1)
    return IdentityReport(err, float(ratio), reps)
