"""Ensemble statistics and audits of moment inequalities against simulation.

Every audit compares a bound with a Monte Carlo estimate, so a point counts as
a violation only when the margin (bound minus estimate, oriented so that
nonnegative means "holds") falls below -3 standard errors.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, stats

from .processes import GridSeries
from .rng_core import GENERIC, Seed
from .strategies import BoundConstants

SLACK = 3.0


def _fmt(v) -> str:
    return repr(float(v))


@dataclass(frozen=True)
class MomentReport:
    """Pointwise moments of X(t) and L(t) over an ensemble.

    ``q_hat`` is the mean of L(t)/sqrt(2 nu).  Standard errors are NaN when
    there is a single replicate (``se_available`` is then False).
    """

    grid: np.ndarray
    p_hat: np.ndarray
    q_hat: np.ndarray
    var_X: np.ndarray
    var_L: np.ndarray
    cov_XL: np.ndarray
    se_p: np.ndarray
    se_q: np.ndarray
    se_var_X: np.ndarray
    se_var_L: np.ndarray
    se_cov_XL: np.ndarray
    reps: int
    nu: float

    COLUMNS = ("t", "p_hat", "se_p", "q_hat", "se_q", "var_X", "se_var_X",
               "var_L", "se_var_L", "cov_XL", "se_cov_XL")

    @property
    def se_available(self) -> bool:
        return self.reps >= 2

    def at(self, t: float) -> int:
        return _grid_index(self.grid, t)

    def se_linear(self, a_p, a_q) -> np.ndarray:
        """Standard error of a_p * p_hat + a_q * q_hat, pointwise."""
        s = math.sqrt(2 * self.nu)
        var = (np.square(a_p) * self.var_X + np.square(a_q) * self.var_L / s ** 2
               + 2 * a_p * a_q * self.cov_XL / s)
        return np.sqrt(np.maximum(var, 0.0) / self.reps)

    def _columns(self):
        return [self.grid, self.p_hat, self.se_p, self.q_hat, self.se_q, self.var_X, self.se_var_X,
                self.var_L, self.se_var_L, self.cov_XL, self.se_cov_XL]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in zip(*self._columns()):
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = {"nu": self.nu, "reps": self.reps, "se_available": self.se_available}
        for name, col in zip(self.COLUMNS, self._columns()):
            d[name] = [None if not np.isfinite(v) else float(v) for v in col]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def synthetic(cls, grid, p, q, nu: float = 1.0, reps: int = 10**6) -> "MomentReport":
        """Noise-free report with given means; useful for exercising audits."""
        grid = np.asarray(grid, dtype=float)
        p = np.broadcast_to(np.asarray(p, dtype=float), grid.shape).copy()
        q = np.broadcast_to(np.asarray(q, dtype=float), grid.shape).copy()
        z = np.zeros_like(grid)
        return cls(grid, p, q, z, z, z, z, z, z, z, z, reps, nu)


def _grid_index(grid: np.ndarray, t: float) -> int:
    i = int(np.argmin(np.abs(grid - t)))
    if not math.isclose(grid[i], t, rel_tol=0, abs_tol=1e-12):
        warnings.warn(f"t={t} is not on the grid; using nearest point {grid[i]}", stacklevel=3)
    return i


def _var_se(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased variance and its standard error from the fourth central moment."""
    n = a.shape[0]
    d = a - a.mean(axis=0)
    var = (d ** 2).sum(axis=0) / (n - 1)
    m4 = (d ** 4).mean(axis=0)
    se = np.sqrt(np.maximum(m4 - var ** 2 * (n - 3) / (n - 1), 0.0) / n)
    return var, se


def moments_from_arrays(grid, X: np.ndarray, L: np.ndarray, nu: float) -> MomentReport:
    """MomentReport from (reps, len(grid)) arrays of X and L."""
    grid = np.asarray(grid, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    n = X.shape[0]
    s = math.sqrt(2 * nu)
    p, q = X.mean(axis=0), L.mean(axis=0) / s
    if n < 2:
        nan = np.full(grid.shape, np.nan)
        return MomentReport(grid, p, q, nan, nan, nan, nan, nan, nan, nan, nan, n, nu)
    var_X, se_vX = _var_se(X)
    var_L, se_vL = _var_se(L)
    dX, dL = X - p, L - L.mean(axis=0)
    prod = dX * dL
    cov = prod.sum(axis=0) / (n - 1)
    se_cov = prod.std(axis=0, ddof=1) / math.sqrt(n)
    return MomentReport(grid, p, q, var_X, var_L, cov, np.sqrt(var_X / n), np.sqrt(var_L / n) / s,
                        se_vX, se_vL, se_cov, n, nu)


def estimate_moments(paths, grid=None) -> MomentReport:
    """Moments from an Ensemble, a list of Ensembles, or a list of SelectionPaths."""
    from .engine import Ensemble
    from .processes import default_grid

    items = [paths] if isinstance(paths, Ensemble) else list(paths)
    if not items:
        raise ValueError("empty ensemble")
    nus = {float(p.nu) for p in items}
    if len(nus) != 1:
        raise ValueError(f"ensemble mixes intensities {sorted(nus)}")
    nu = nus.pop()
    ensembles = [e for e in items if isinstance(e, Ensemble)]
    if ensembles and len(ensembles) != len(items):
        raise TypeError("cannot mix Ensembles and SelectionPaths")
    if ensembles and grid is None:
        g = ensembles[0].grid
        if any(not np.array_equal(e.grid, g) for e in ensembles):
            raise ValueError("ensembles use different grids; pass one explicitly")
        return moments_from_arrays(g, np.concatenate([e.X for e in ensembles]),
                                   np.concatenate([e.L for e in ensembles]), nu)
    if ensembles:
        if any(e.paths is None for e in ensembles):
            raise ValueError("resampling on a new grid needs kept paths")
        items = [p for e in ensembles for p in e.paths]
    g = default_grid() if grid is None else np.asarray(grid, dtype=float)
    XL = [p.sample(g) for p in items]
    return moments_from_arrays(g, np.array([a for a, _ in XL]), np.array([b for _, b in XL]), nu)


@dataclass(frozen=True)
class BoundAuditResult:
    """Signed margin of one bound on a grid; violations where margin < -3 SE."""

    bound_name: str
    grid: np.ndarray
    margin: np.ndarray
    se: np.ndarray
    violations: tuple[int, ...]
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("bound", "t", "margin", "se", "violated"))
        bad = set(self.violations)
        for i, (t, m, s) in enumerate(zip(self.grid, self.margin, self.se)):
            w.writerow((self.bound_name, _fmt(t), _fmt(m), _fmt(s), int(i in bad)))
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"bound": self.bound_name, "passed": self.passed,
                "t": self.grid.tolist(), "margin": self.margin.tolist(), "se": self.se.tolist(),
                "violations": list(self.violations), **self.extra}


def _audit(name, grid, margin, se, mask=None, **extra) -> BoundAuditResult:
    margin = np.asarray(margin, dtype=float)
    se = np.nan_to_num(np.broadcast_to(np.asarray(se, dtype=float), margin.shape).copy())
    if mask is not None:
        grid, margin, se = grid[mask], margin[mask], se[mask]
    bad = np.nonzero(margin < -SLACK * se - 1e-12)[0]
    return BoundAuditResult(name, np.asarray(grid, dtype=float), margin, se,
                            tuple(int(i) for i in bad), dict(extra))


def audit_general_inequalities(report: MomentReport, feasible: bool = True) -> list[BoundAuditResult]:
    """Moment inequalities valid for every control; the last two need a feasible one.

    pq:     p - t >= 2(q - t)
    pq1:    (p - t)^2 <= (t + 2q + p)(t - 2q + p)
    pq2:    (q - t)^2 <= t(t - 2q + p)
    pq3-p:  (p - t)^2 < 8(1 - q(1))
    pq3-q:  (q - t)^2 < 2(1 - q(1))

    pq1 and pq2 both simplify to q^2 <= t p; they are reported separately
    with margins scaled as written.
    """
    t, p, q = report.grid, report.p_hat, report.q_hat
    out = [_audit("pq", t, (p - t) - 2 * (q - t), report.se_linear(1.0, -2.0))]
    m1 = (t + 2 * q + p) * (t - 2 * q + p) - (p - t) ** 2
    out.append(_audit("pq1", t, m1, report.se_linear(4 * t, -8 * q)))
    m2 = t * (t - 2 * q + p) - (q - t) ** 2
    out.append(_audit("pq2", t, m2, report.se_linear(t, -2 * q)))
    if feasible:
        if not math.isclose(t[-1], 1.0):
            raise ValueError("pq3 audits need the grid to end at t = 1")
        q1, se_q1 = q[-1], report.se_q[-1]
        # covariances across times are not in the report; combine SEs by the triangle inequality
        m3p = 8 * (1 - q1) - (p - t) ** 2
        out.append(_audit("pq3-p", t, m3p, 2 * np.abs(p - t) * report.se_p + 8 * se_q1))
        m3q = 2 * (1 - q1) - (q - t) ** 2
        out.append(_audit("pq3-q", t, m3q, 2 * np.abs(q - t) * report.se_q + 2 * se_q1))
    return out


def gronwall_bound(g, a: float, grid, tol: float = 1e-9) -> np.ndarray:
    """f(t) = (1-t) int_0^t exp(a/(1-s) - a/(1-t)) g(s)/(1-s) ds on a grid in [0, 1).

    ``g`` is a callable or an array of samples on ``grid`` (linearly
    interpolated).  Grid points at t >= 1 are dropped with a warning.
    The integral is accumulated interval by interval with the exponential
    factor carried as a ratio, which stays bounded for large a/(1-t).
    """
    grid = np.asarray(grid, dtype=float)
    if not callable(g):
        vals = np.broadcast_to(np.asarray(g, dtype=float), grid.shape)
        gg = vals[grid < 1]
        tg = grid[grid < 1]
        g = (lambda s: np.interp(s, tg, gg))
    if np.any(grid >= 1):
        warnings.warn("t = 1 is outside the bound's range; endpoint excluded", stacklevel=2)
        grid = grid[grid < 1]
    if grid.size and (grid[0] < 0 or np.any(np.diff(grid) <= 0)):
        raise ValueError("grid must be increasing within [0, 1)")
    out = np.empty(grid.size)
    acc, prev = 0.0, 0.0
    for i, t in enumerate(grid):
        if t > prev:
            ref = a / (1 - t)
            piece = integrate.quad(lambda s: math.exp(a / (1 - s) - ref) * float(g(s)) / (1 - s),
                                   prev, t, epsabs=tol, epsrel=tol, limit=200)[0]
            acc = acc * math.exp(a / (1 - prev) - ref) + piece
            prev = t
        out[i] = (1 - t) * acc
    return out


def G_function(b, t):
    """1 + b - t - (1+b)(1-t) exp(-bt/(1-t)); at t = 1 the limit b (b > 0)."""
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 1 + b - t - (1 + b) * (1 - t) * np.exp(-b * t / (1 - t))
    lim = np.where(b > 0, b, np.where(b == 0, 0.0, np.inf))
    out = np.where(t >= 1, lim, val)
    return out[()] if out.ndim == 0 else out


def small_b_coefficient(t):
    """(2t - 3t^2)/(2(1-t)), the b^2 coefficient of G(b, t) at small b."""
    t = np.asarray(t, dtype=float)
    return (2 * t - 3 * t ** 2) / (2 * (1 - t))


def c_plus(density: int = 10_000) -> tuple[float, float]:
    """Maximum of the b^2 coefficient over [0, 1): lattice search, then bounded refinement."""
    t = np.linspace(0, 1, density, endpoint=False)
    i = int(np.argmax(small_b_coefficient(t)))
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, density - 1)]
    res = optimize.minimize_scalar(lambda s: -float(small_b_coefficient(s)), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-12})
    return float(-res.fun), float(res.x)


def audit_pq_bounds(report: MomentReport, constants: BoundConstants) -> list[BoundAuditResult]:
    """Bounds on p(t) - t, q(t) - t and E L(t) for a self-similar control.

    p-up:    p - t <= beta+ sqrt(2) t/sqrt(nu) + c+ beta+^2/(2 nu)
    p-down3: p - t >= -3 beta-/sqrt(nu)
    p-down2: p - t >= -beta- sqrt(2) t/sqrt(nu) - beta-^2/(2 nu (1-t)), t <= 1 - beta-/(2 sqrt(nu))
    q-up:    q - t <= beta+ t/sqrt(2 nu)
    Ldown:   E L(t) >= sqrt(2 nu) t + log(1-t)/6 - (3 beta-/sqrt(2) + K_rem), t <= 1 - 1/sqrt(nu)

    The constant K_rem in Ldown is only known to exist, so it is fitted (the
    smallest nonnegative value making the bound hold at the estimates) and
    reported under ``extra`` rather than asserted.
    """
    t, p, q, nu = report.grid, report.p_hat, report.q_hat, report.nu
    bm, bp = constants.beta_minus, constants.beta_plus
    rn = math.sqrt(nu)
    cp = c_plus()[0]
    out = [
        _audit("p-up", t, bp * math.sqrt(2) * t / rn + cp * bp ** 2 / (2 * nu) - (p - t), report.se_p),
        _audit("p-down3", t, (p - t) + 3 * bm / rn, report.se_p),
    ]
    sub = t <= 1 - bm / (2 * rn)
    with np.errstate(divide="ignore"):
        low2 = -bm * math.sqrt(2) * t / rn - bm ** 2 / (2 * nu * np.maximum(1 - t, 1e-300))
    out.append(_audit("p-down2", t, (p - t) - low2, report.se_p, mask=sub))
    out.append(_audit("q-up", t, bp * t / math.sqrt(2 * nu) - (q - t), report.se_q))
    cut = t <= 1 - 1 / rn
    s = math.sqrt(2 * nu)
    with np.errstate(divide="ignore"):
        base = s * t + np.log1p(-np.minimum(t, 1 - 1e-300)) / 6 - 3 * bm / math.sqrt(2)
    EL, se_EL = q * s, report.se_q * s
    k_rem = float(max(np.max((base - EL)[cut]), 0.0)) if cut.any() else 0.0
    out.append(_audit("Ldown", t, EL - (base - k_rem), se_EL, mask=cut, K_rem=k_rem))
    return out


@dataclass(frozen=True)
class RemainderScan:
    """r(nu) = E L(1) - sqrt(2 nu) + log(nu)/12 across intensities."""

    nus: np.ndarray
    r: np.ndarray
    se: np.ndarray
    max_pairwise_diff: float
    slack_adjusted_diff: float
    slope: float
    slope_se: float
    growing: bool
    tolerance: float

    @property
    def bounded(self) -> bool:
        return self.slack_adjusted_diff < self.tolerance and not self.growing

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("nu", "r", "se"))
        for row in zip(self.nus, self.r, self.se):
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"nu": self.nus.tolist(), "r": self.r.tolist(), "se": self.se.tolist(),
                "max_pairwise_diff": self.max_pairwise_diff,
                "slack_adjusted_diff": self.slack_adjusted_diff,
                "slope": self.slope, "slope_se": self.slope_se,
                "growing": self.growing, "bounded": self.bounded}


def remainder_scan(nus: Sequence[float], means: Sequence[float], ses: Sequence[float] | None = None,
                   tolerance: float = 0.5, growth_threshold: float = 1 / 24) -> RemainderScan:
    """Remainders, their spread, and a test for logarithmic growth.

    The spread is the largest |r_i - r_j|; the slack-adjusted spread subtracts
    3 standard errors of each difference.  Growth is flagged when the slope of
    r against log(nu), less 3 of its standard errors, exceeds
    ``growth_threshold`` in absolute value (a strategy that misses the
    log(nu)/12 correction has slope 1/12).
    """
    nus = np.asarray(nus, dtype=float)
    means = np.asarray(means, dtype=float)
    ses = np.zeros_like(means) if ses is None else np.asarray(ses, dtype=float)
    if nus.size < 3:
        raise ValueError("need at least three intensities")
    if np.log10(nus.max() / nus.min()) < 2 - 1e-9:
        raise ValueError("intensities must span at least two decades")
    r = means - np.sqrt(2 * nus) + np.log(nus) / 12
    i, j = np.triu_indices(r.size, 1)
    diff = np.abs(r[i] - r[j])
    adj = np.maximum(diff - SLACK * np.hypot(ses[i], ses[j]), 0.0)
    x = np.log(nus)
    if np.all(ses > 0):
        w = 1 / ses ** 2
    else:
        w = np.ones_like(r)
    xm = np.sum(w * x) / w.sum()
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * r) / sxx)
    slope_se = float(math.sqrt(1 / sxx)) if np.all(ses > 0) else 0.0
    growing = abs(slope) - SLACK * slope_se > growth_threshold
    return RemainderScan(nus, r, ses, float(diff.max()), float(adj.max()), slope, slope_se,
                         bool(growing), tolerance)


@dataclass(frozen=True)
class CovPair:
    s: float
    t: float
    components: tuple[str, str]
    cov: float
    se: float
    n: int


def _component(ensemble, label: str) -> tuple[np.ndarray, np.ndarray]:
    from .engine import Ensemble

    if isinstance(ensemble, Ensemble):
        table = {"X": lambda e: e.X, "L": lambda e: e.L, "X~": lambda e: e.X_tilde,
                 "L~": lambda e: e.L_tilde}
        if label not in table:
            raise KeyError(f"unknown component {label!r}; choose from {sorted(table)}")
        return ensemble.grid, table[label](ensemble)
    if isinstance(ensemble, dict):
        return np.asarray(ensemble["grid"], dtype=float), np.asarray(ensemble[label], dtype=float)
    series = list(ensemble)
    return series[0].grid, np.array([g[label] for g in series])


def jackknife_cov(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Unbiased covariance of paired samples and its leave-one-out jackknife SE."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.size
    if n < 3:
        raise ValueError("jackknife needs at least three replicates")
    d, e = a - a.mean(), b - b.mean()
    S = float(np.dot(d, e))
    loo = (S - n / (n - 1) * d * e) / (n - 2)
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return S / (n - 1), se


def empirical_cov(ensemble, s: float, t: float, components=("X~", "X~")) -> CovPair:
    """Cov(A(s), B(t)) across replicates; off-grid times snap to the nearest grid point."""
    ga, A = _component(ensemble, components[0])
    gb, B = _component(ensemble, components[1])
    i, j = _grid_index(ga, s), _grid_index(gb, t)
    cov, se = jackknife_cov(A[:, i], B[:, j])
    return CovPair(float(ga[i]), float(gb[j]), tuple(components), cov, se, A.shape[0])


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float


def two_sample_ks(a, b) -> KSResult:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if not a.size or not b.size:
        raise ValueError("both samples must be nonempty")
    res = stats.ks_2samp(a, b, method="asymp")
    return KSResult(float(res.statistic), float(res.pvalue))


def sample_feasible_limit(n: int, seed: Seed = Seed(0)) -> np.ndarray:
    """Draws of 2^{-1/4} min(xi1/sqrt(3), xi2) for independent standard normals."""
    z = seed.generator(GENERIC).standard_normal((n, 2))
    return 2 ** -0.25 * np.minimum(z[:, 0] / math.sqrt(3), z[:, 1])


def feasible_limit_mean() -> float:
    """E of the limit law by quadrature of the survival function of the minimum."""
    sa = math.sqrt(1 / 3)

    def surv(x):
        return stats.norm.sf(x / sa) * stats.norm.sf(x)

    pos = integrate.quad(surv, 0, np.inf, epsabs=1e-13)[0]
    neg = integrate.quad(lambda x: 1 - surv(x), -np.inf, 0, epsabs=1e-13)[0]
    return 2 ** -0.25 * (pos - neg)


@dataclass(frozen=True)
class LimitLawReport:
    ks: KSResult
    max_X_tilde_1: float
    n_sim: int
    n_limit: int

    @property
    def nonpositive(self) -> bool:
        return self.max_X_tilde_1 <= 0.0


def feasible_stationary_limit_check(ensemble, reps_limit: int = 100_000,
                                    seed: Seed = Seed(0)) -> LimitLawReport:
    """Compare L~(1) of a feasible-stationary ensemble with the limit law."""
    if ensemble.control.variant != "feasible-stationary":
        raise ValueError("expected a feasible-stationary ensemble")
    X1, L1 = ensemble.terminal()
    nu = ensemble.nu
    L_tilde = nu ** 0.25 * (L1 / math.sqrt(2 * nu) - 1)
    X_tilde = nu ** 0.25 * (X1 - 1)
    ks = two_sample_ks(L_tilde, sample_feasible_limit(reps_limit, seed))
    return LimitLawReport(ks, float(X_tilde.max()), L_tilde.size, reps_limit)


def moments_series(report: MomentReport) -> GridSeries:
    """The report as a GridSeries (one column per field)."""
    cols = report._columns()[1:]
    return GridSeries(report.grid, np.column_stack(cols), report.COLUMNS[1:], nu=report.nu)
