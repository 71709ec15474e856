"""Control functions psi(t, x) for online increasing-subsequence selection.

A control gives the width of the acceptance window: with last selected mark
``x`` at time ``t``, the next mark ``x'`` is taken iff ``x < x' <= x + psi(t, x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as kn

VARIANTS = ("greedy", "stationary", "feasible-stationary", "self-similar", "constant",
            "majorant", "minorant")


class CalibrationError(RuntimeError):
    """Raised when the deviation of a control from sqrt(2(1-x)/(nu(1-t))) grows without bound."""


@dataclass(frozen=True)
class DeltaSpec:
    """Scale function delta(m) of a self-similar control.

    variants: ``"stationary"`` (sqrt(2/m)), ``"optimal"`` (sqrt(2/m) - 1/(3m)),
    ``"beta"`` (sqrt(2/m) + beta/m).  All clipped to [0, 1], and delta(0) = 1.
    """

    variant: str = "optimal"
    beta: float = 0.0

    def __post_init__(self):
        if self.variant not in ("stationary", "optimal", "beta"):
            raise ValueError(f"unknown delta variant {self.variant!r}")

    @property
    def coefficient(self) -> float:
        if self.variant == "stationary":
            return 0.0
        if self.variant == "optimal":
            return -1.0 / 3.0
        return float(self.beta)


StationaryDelta = DeltaSpec("stationary")
OptimalExpansion = DeltaSpec("optimal")


def BetaPerturbed(beta: float) -> DeltaSpec:
    return DeltaSpec("beta", float(beta))


def delta_eval(spec: DeltaSpec, m):
    """Clipped evaluation of delta at m >= 0 (scalar or array)."""
    m_arr = np.asarray(m, dtype=float)
    if np.any(m_arr < 0):
        raise ValueError("delta is defined for m >= 0")
    out = kn.delta_array(spec.coefficient, np.ascontiguousarray(m_arr.ravel()))
    return float(out[0]) if m_arr.ndim == 0 else out.reshape(m_arr.shape)


@dataclass(frozen=True)
class ControlSpec:
    variant: str
    nu: float
    delta: DeltaSpec | None = None
    c: float | None = None          # ConstantC parameter
    beta: float = 0.0               # majorant / minorant
    K: float = 0.0                  # majorant / minorant
    _params: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown control variant {self.variant!r}")
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.variant == "self-similar" and self.delta is None:
            object.__setattr__(self, "delta", OptimalExpansion)
        if self.variant == "constant" and not (self.c is not None and self.c > 0):
            raise ValueError("constant control needs c > 0")
        p = np.zeros(3)
        p[0] = self.nu
        if self.variant == "stationary":
            p[1] = math.sqrt(2.0 / self.nu)
        elif self.variant == "constant":
            p[1] = math.sqrt(self.c / self.nu)
        elif self.variant == "self-similar":
            p[1] = self.delta.coefficient
        elif self.variant in ("majorant", "minorant"):
            p[1], p[2] = self.beta, self.K
        object.__setattr__(self, "_params", p)

    @property
    def kind(self) -> int:
        return {
            "greedy": kn.GREEDY,
            "stationary": kn.CONSTANT,
            "constant": kn.CONSTANT,
            "feasible-stationary": kn.FEASIBLE_STATIONARY,
            "self-similar": kn.SELF_SIMILAR,
            "majorant": kn.MAJORANT,
            "minorant": kn.MINORANT,
        }[self.variant]

    @property
    def params(self) -> np.ndarray:
        return self._params

    @property
    def feasible(self) -> bool:
        return self.variant in ("greedy", "feasible-stationary", "self-similar", "minorant")

    @property
    def tag(self) -> str:
        if self.variant == "self-similar":
            d = self.delta
            return "self-similar:" + (f"beta={d.beta:g}" if d.variant == "beta" else d.variant)
        if self.variant == "constant":
            return f"constant:c={self.c:g}"
        return self.variant

    def with_nu(self, nu: float) -> "ControlSpec":
        return ControlSpec(self.variant, nu, self.delta, self.c, self.beta, self.K)

    def __call__(self, t, x):
        return psi(self, t, x)

    def cap(self, t0, t1, x_lo: float = 0.0) -> np.ndarray:
        """Upper bound on psi(s, x) over s in [t0, t1] and every x >= x_lo.

        Used to decide which parts of the increment reserve can ever be
        accepted.  Exact (attained) for every variant except minorant.
        """
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        nu = self.nu
        base = math.sqrt(2.0 / nu)
        y = max(1.0 - x_lo, 0.0)
        v = self.variant
        if v == "greedy":
            out = np.full(np.broadcast(t0, t1).shape, y)
        elif v in ("stationary", "constant"):
            out = np.full(np.broadcast(t0, t1).shape, self.params[1])
        elif v == "feasible-stationary":
            out = np.full(np.broadcast(t0, t1).shape, min(base, y))
        elif v == "self-similar":
            c = self.delta.coefficient
            m_lo = nu * (1.0 - t1) * y
            m_hi = nu * (1.0 - t0) * y
            m = m_lo if c >= 0 else np.clip(2.0 * c * c, m_lo, m_hi)
            m = np.broadcast_to(m, np.broadcast(t0, t1).shape)
            out = y * delta_eval(self.delta, m)
            # delta(0) = 1 is only reached at t = 1 or x = 1, where psi is 0;
            # the supremum over s < 1 is the one-sided limit m -> 0+
            out = np.where(m <= 0.0, y if c >= 0 else 0.0, out)
        elif v == "majorant":
            cut = 1.0 - self.K / math.sqrt(nu)
            s = np.minimum(t1, cut)
            bump = np.where(t0 <= cut, self.beta / (nu * np.maximum(1.0 - s, 1e-300)), 0.0)
            out = base + bump
        else:  # minorant
            cut = 1.0 - self.K / math.sqrt(nu)
            w = np.minimum(base - self.beta / (nu * np.maximum(1.0 - t0, 1e-300)), t1 - x_lo)
            out = np.where(t0 <= cut, np.maximum(w, 0.0), 0.0)
        return np.where(t0 >= 1.0, 0.0, out)


def Greedy(nu: float = 1.0) -> ControlSpec:
    return ControlSpec("greedy", nu)


def Stationary(nu: float) -> ControlSpec:
    return ControlSpec("stationary", nu)


def FeasibleStationary(nu: float) -> ControlSpec:
    return ControlSpec("feasible-stationary", nu)


def SelfSimilar(nu: float, delta: DeltaSpec = OptimalExpansion) -> ControlSpec:
    return ControlSpec("self-similar", nu, delta=delta)


def ConstantC(nu: float, c: float) -> ControlSpec:
    return ControlSpec("constant", nu, c=c)


def psi(control: ControlSpec, t, x):
    """Acceptance-window width at (t, x); zero at t >= 1.  Broadcasts over arrays."""
    t_arr, x_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    out = kn.psi_array(control.kind, control.params,
                       np.ascontiguousarray(t_arr.ravel()), np.ascontiguousarray(x_arr.ravel()))
    return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)


def parse_control(tag: str, nu: float) -> ControlSpec:
    """Build a control from its string tag, e.g. ``"self-similar:beta=2.5"``."""
    tag = tag.strip()
    if tag == "greedy":
        return Greedy(nu)
    if tag == "stationary":
        return Stationary(nu)
    if tag == "feasible-stationary":
        return FeasibleStationary(nu)
    if tag.startswith("constant:c="):
        return ConstantC(nu, float(tag.split("=", 1)[1]))
    if tag.startswith("self-similar:"):
        rest = tag.split(":", 1)[1]
        if rest == "stationary":
            return SelfSimilar(nu, StationaryDelta)
        if rest == "optimal":
            return SelfSimilar(nu, OptimalExpansion)
        if rest.startswith("beta="):
            return SelfSimilar(nu, BetaPerturbed(float(rest.split("=", 1)[1])))
    raise ValueError(f"unknown strategy tag {tag!r}")


def _lattice(grid_density: int):
    if grid_density < 2:
        raise ValueError("grid_density must be at least 2")
    pts = np.arange(grid_density) / grid_density
    return np.meshgrid(pts, pts, indexing="ij")


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    worst_violation: float
    location: tuple[float, float]


def feasibility_audit(control: ControlSpec, grid_density: int = 512) -> FeasibilityReport:
    """Scan a (t, x) lattice on [0,1)^2 for windows wider than 1 - x."""
    t, x = _lattice(grid_density)
    viol = np.maximum(psi(control, t, x) - (1.0 - x), 0.0)
    i = np.unravel_index(np.argmax(viol), viol.shape)
    worst = float(viol[i])
    return FeasibilityReport(worst == 0.0, worst, (float(t[i]), float(x[i])))


@dataclass(frozen=True)
class BoundConstants:
    """Constants squeezing a self-similar control around sqrt(2(1-x)/(nu(1-t))).

    ``beta_minus``/``beta_plus`` bound the deviation below/above in units of
    1/(nu(1-t)); ``beta`` is the common constant (at least 1) and ``K`` sets
    the freeze time 1 - K/sqrt(nu) of the majorant and minorant.
    """

    beta_minus: float
    beta_plus: float
    beta: float
    K: float

    def __post_init__(self):
        if not self.beta_minus > 0:
            raise ValueError("beta_minus must be positive")
        if self.beta_plus < 0:
            raise ValueError("beta_plus must be nonnegative")
        if self.beta < max(self.beta_minus, self.beta_plus, 1.0):
            raise ValueError("beta must dominate beta_minus, beta_plus and 1")
        if not self.K > 0:
            raise ValueError("K must be positive")

    @classmethod
    def from_beta(cls, beta_minus: float, beta_plus: float, margin: float = 0.05,
                  beta: float | None = None, K: float | None = None) -> "BoundConstants":
        if beta is None:
            beta = max(beta_minus, beta_plus, 1.0) * (1.0 + margin)
        if K is None:
            K = 10.0 * max(beta, 1.0)
        return cls(beta_minus, beta_plus, beta, K)


def squeeze_deviation(control: ControlSpec, t, x):
    """(psi - sqrt(2(1-x)/(nu(1-t)))) * nu(1-t) on [0,1)^2."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    nu = control.nu
    ref = np.sqrt(2.0 * (1.0 - x) / (nu * (1.0 - t)))
    return (psi(control, t, x) - ref) * nu * (1.0 - t)


def scaled_deviation(control: ControlSpec, m):
    """Squeeze deviation of a self-similar control as a function of m = nu(1-t)(1-x).

    With psi = (1-x) delta(m) the deviation (psi - sqrt(2(1-x)/(nu(1-t)))) nu(1-t)
    equals m delta(m) - sqrt(2m), so it depends on (t, x) only through m.
    """
    m = np.asarray(m, dtype=float)
    return m * delta_eval(control.delta, m) - np.sqrt(2.0 * m)


def calibrate_beta(control: ControlSpec, grid_density: int = 512, margin: float = 0.05,
                   min_scaled: float = 1.0) -> BoundConstants:
    """Smallest squeeze constants over the region where nu(1-t)(1-x) >= min_scaled.

    The deviation is evaluated at the (t, x) lattice points of that region and,
    because it is a function of m = nu(1-t)(1-x) alone, also on a dense
    logarithmic grid of m covering the same range including its endpoints.
    """
    if control.variant != "self-similar":
        raise ValueError("calibrate_beta needs a self-similar control")
    t, x = _lattice(grid_density)
    m_lat = control.nu * (1.0 - t) * (1.0 - x)
    m_lat = m_lat[m_lat >= min_scaled]
    if control.nu < min_scaled:
        raise CalibrationError(f"nu(1-t)(1-x) never reaches {min_scaled}; increase nu")
    m = np.concatenate([m_lat, np.geomspace(min_scaled, control.nu, 8 * grid_density)])
    dev = scaled_deviation(control, m)
    if not np.all(np.isfinite(dev)):
        raise CalibrationError("non-finite deviation")
    # a conforming delta keeps |dev| bounded; compare the top decade of m with the rest
    if m.max() >= 100.0:
        top = m >= m.max() / 10.0
        lower = np.abs(dev[~top]).max()
        if np.abs(dev[top]).max() > 2.0 * lower + 1.0:
            raise CalibrationError(
                f"deviation grows with nu(1-t)(1-x): {np.abs(dev[top]).max():.3g} vs {lower:.3g}")
    beta_plus = float(dev.max())
    beta_plus = beta_plus if beta_plus > 1e-9 else 0.0  # rounding noise of an exact zero
    beta_minus = max(float(-dev.min()), 1e-12)
    return BoundConstants.from_beta(beta_minus, beta_plus, margin)
