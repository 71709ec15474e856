"""Derived processes of a selection path: scaling, compensators, martingale, Z."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy import integrate

from .strategies import ControlSpec, psi

if TYPE_CHECKING:
    from .engine import SelectionPath


def default_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class GridSeries:
    """One or more processes sampled on a fixed time grid.

    ``values`` has shape ``(len(grid), n_components)``.
    """

    grid: np.ndarray
    values: np.ndarray
    labels: tuple[str, ...]
    nu: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape != (self.grid.size, len(self.labels)):
            raise ValueError(f"values shape {self.values.shape} does not match grid/labels")

    def __getitem__(self, label: str) -> np.ndarray:
        return self.values[:, self.labels.index(label)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("t",) + tuple(self.labels))
        for t, row in zip(self.grid, self.values):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"nu": self.nu, "t": self.grid.tolist(),
                           "series": {k: self.values[:, i].tolist() for i, k in enumerate(self.labels)}},
                          sort_keys=True)

    @classmethod
    def from_csv(cls, text: str, nu: float | None = None) -> "GridSeries":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array(rows[1:], dtype=float)
        return cls(data[:, 0], data[:, 1:], tuple(rows[0][1:]), nu=nu)

    @classmethod
    def from_json(cls, text: str) -> "GridSeries":
        d = json.loads(text)
        labels = tuple(sorted(d["series"]))
        return cls(np.array(d["t"]), np.column_stack([d["series"][k] for k in labels]), labels, nu=d["nu"])


def normalize(path: "SelectionPath", grid=None) -> GridSeries:
    """X~(t) = nu^(1/4)(X(t) - t),  L~(t) = nu^(1/4)(L(t)/sqrt(2 nu) - t)."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    nu = path.nu
    X, L = path.sample(grid)
    s = nu ** 0.25
    return GridSeries(grid, np.column_stack([s * (X - grid), s * (L / math.sqrt(2 * nu) - grid)]),
                      ("X~", "L~"), nu=nu)


class _DeltaIntegrals:
    """Antiderivatives of delta and delta^2 for delta(m) = clip(sqrt(2/m) + c/m, 0, 1).

    Unclipped pieces: int delta = 2 sqrt(2m) + c log m,
    int delta^2 = 2 log m - 4 sqrt(2) c / sqrt(m) - c^2 / m.
    """

    def __init__(self, c: float):
        self.c = c
        br = set()
        if c < 0:
            br.add(c * c / 2.0)                       # raw delta = 0
        if c == 0:
            br.add(2.0)
        else:
            disc = 2.0 + 4.0 * c                      # c y^2 + sqrt2 y - 1 = 0, y = m^-1/2
            if disc >= 0:
                for y in ((-math.sqrt(2) + math.sqrt(disc)) / (2 * c), (-math.sqrt(2) - math.sqrt(disc)) / (2 * c)):
                    if y > 0:
                        br.add(1.0 / (y * y))
        self.points = np.array(sorted(br))
        edges = np.concatenate([[0.0], self.points, [np.inf]])
        self.kind = []                                 # per piece: 'one', 'zero' or 'raw'
        for a, b in zip(edges[:-1], edges[1:]):
            mid = (a + b) / 2 if np.isfinite(b) else max(2 * a, 1.0)
            raw = math.sqrt(2 / mid) + c / mid
            self.kind.append("one" if raw >= 1 else "zero" if raw <= 0 else "raw")
        self._edges = edges
        self._cum1 = np.zeros(len(edges) - 1)
        self._cum2 = np.zeros(len(edges) - 1)
        for i in range(1, len(edges) - 1):
            self._cum1[i] = self._cum1[i - 1] + self._piece(i - 1, edges[i], 1) - self._piece(i - 1, edges[i - 1], 1)
            self._cum2[i] = self._cum2[i - 1] + self._piece(i - 1, edges[i], 2) - self._piece(i - 1, edges[i - 1], 2)

    def _piece(self, i, m, power):
        kind = self.kind[i]
        m = np.asarray(m, dtype=float)
        if kind == "zero":
            return np.zeros_like(m)
        if kind == "one":
            return m.copy()
        c = self.c
        with np.errstate(divide="ignore", invalid="ignore"):
            if power == 1:
                return 2 * np.sqrt(2 * m) + c * np.log(m)
            return 2 * np.log(m) - 4 * math.sqrt(2) * c / np.sqrt(m) - c * c / m

    def __call__(self, m, power: int = 1) -> np.ndarray:
        """int_0^m delta(mu)^power d mu."""
        m = np.asarray(m, dtype=float)
        idx = np.searchsorted(self._edges, m, side="right") - 1
        idx = np.clip(idx, 0, len(self.kind) - 1)
        cum = self._cum1 if power == 1 else self._cum2
        out = np.empty_like(m)
        for i in np.unique(idx):
            sel = idx == i
            out[sel] = cum[i] + self._piece(i, m[sel], power) - self._piece(i, np.full(sel.sum(), self._edges[i]), power)
        return np.where(m <= 0, 0.0, out)


def _segment_integrals(control: ControlSpec, x, a, b, method: str, tol: float):
    """Integrals of psi and psi^2 over [a, b] with the state frozen at x (vectorized)."""
    x, a, b = (np.asarray(v, dtype=float) for v in (x, a, b))
    v = control.variant
    nu = control.nu
    if method == "closed":
        if v in ("greedy", "stationary", "constant", "feasible-stationary"):
            w = psi(control, a, x)
            return w * (b - a), w * w * (b - a)
        if v == "self-similar":
            F = _DeltaIntegrals(control.delta.coefficient)
            y = np.maximum(1.0 - x, 0.0)
            ma, mb = nu * (1 - a) * y, nu * (1 - b) * y
            i1 = (F(ma, 1) - F(mb, 1)) / nu
            i2 = y * (F(ma, 2) - F(mb, 2)) / nu
            return np.where(y > 0, i1, 0.0), np.where(y > 0, i2, 0.0)
        method = "quad"
    if method != "quad":
        raise ValueError(f"unknown integration method {method!r}")
    i1 = np.empty(a.shape)
    i2 = np.empty(a.shape)
    for k, (xk, ak, bk) in enumerate(zip(x.ravel(), a.ravel(), b.ravel())):
        if bk <= ak:
            i1.flat[k] = i2.flat[k] = 0.0
            continue
        i1.flat[k] = integrate.quad(lambda s: psi(control, s, xk), ak, bk, epsabs=tol, epsrel=0, limit=200)[0]
        i2.flat[k] = integrate.quad(lambda s: psi(control, s, xk) ** 2, ak, bk, epsabs=tol, epsrel=0, limit=200)[0]
    return i1, i2


def compensators(path: "SelectionPath", control: ControlSpec, grid=None, method: str = "closed",
                 tol: float = 1e-9, check: bool = True) -> GridSeries:
    """C_X(t) = (nu/2) int_0^t psi^2(s, X(s)) ds,  C_L(t) = nu int_0^t psi(s, X(s)) ds.

    X is constant between jumps, so each segment is integrated with the state
    frozen: in closed form where the control allows it, otherwise by adaptive
    quadrature to absolute tolerance ``tol``.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    nu = control.nu
    if check and path.length:
        w = psi(control, path.times, path.X_left(path.times))
        bad = path.increments > w + 1e-9
        if bad.any():
            raise ValueError(f"path does not match control: {int(bad.sum())} jumps exceed the window")
    starts = np.concatenate([[0.0], path.times])
    states = np.concatenate([[path.x0], path.marks])
    ends = np.concatenate([path.times, [1.0]])
    s1, s2 = _segment_integrals(control, states[:-1], starts[:-1], ends[:-1], method, tol)
    c1 = np.concatenate([[0.0], np.cumsum(s1)])
    c2 = np.concatenate([[0.0], np.cumsum(s2)])
    k = np.searchsorted(path.times, grid, side="right")
    p1, p2 = _segment_integrals(control, states[k], starts[k], grid, method, tol)
    CL = nu * (c1[k] + p1)
    CX = nu / 2.0 * (c2[k] + p2)
    return GridSeries(grid, np.column_stack([CX, CL]), ("C_X", "C_L"), nu=nu)


def F_hat(z):
    """Concave two-term surrogate of the value function: sqrt(2z) - log(z+1)/12."""
    z = np.asarray(z, dtype=float)
    out = np.sqrt(2.0 * z) - np.log1p(z) / 12.0
    return float(out) if out.ndim == 0 else out


def martingale_M(path: "SelectionPath", grid=None) -> GridSeries:
    """M^(t) = L(t) + F^(nu(1-t)(1-X(t))) - F^(nu)."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    nu = path.nu
    X, L = path.sample(grid)
    z = np.maximum(nu * (1 - grid) * (1 - X), 0.0)
    return GridSeries(grid, L + F_hat(z) - F_hat(nu), ("M^",), nu=nu)


def z_process(path: "SelectionPath", grid=None) -> GridSeries:
    """Square-root process Z(t) = sqrt(nu(1-t)(1-X(t))) and two normalisations.

    ``Z~`` is nu^(1/4)(Z/sqrt(2 nu) - (1-t)).  Along the diagonal Z/sqrt(2 nu)
    is (1-t)/sqrt2, so this version drifts like nu^(1/4)(1-t)(1/sqrt2 - 1).
    ``Z~c`` = nu^(1/4)(Z/sqrt(nu) - (1-t)) is centred on the diagonal and
    behaves like -X~/2 for large nu.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    nu = path.nu
    X, _ = path.sample(grid)
    Z = np.sqrt(np.maximum(nu * (1 - grid) * (1 - X), 0.0))
    s = nu ** 0.25
    Zt = s * (Z / math.sqrt(2 * nu) - (1 - grid))
    Zc = s * (Z / math.sqrt(nu) - (1 - grid))
    return GridSeries(grid, np.column_stack([Z, Zt, Zc]), ("Z", "Z~", "Z~c"), nu=nu)


def derived_processes(path: "SelectionPath", control: ControlSpec, grid=None,
                      method: str = "closed") -> GridSeries:
    """Normalised compensators, martingale and the two length/maximum combinations.

    Columns: ``CX~`` = nu^(1/4)(C_X - t), ``CL~`` = 2 nu^(1/4)(C_L/sqrt(2nu) - t),
    ``M~`` = sqrt2 nu^(-1/4) M^, ``2L~-X~`` and ``L~-2X~``.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    nu = path.nu
    s = nu ** 0.25
    C = compensators(path, control, grid, method=method)
    M = martingale_M(path, grid)["M^"]
    N = normalize(path, grid)
    Xt, Lt = N["X~"], N["L~"]
    cols = [s * (C["C_X"] - grid), 2 * s * (C["C_L"] / math.sqrt(2 * nu) - grid),
            math.sqrt(2) / s * M, 2 * Lt - Xt, Lt - 2 * Xt]
    return GridSeries(grid, np.column_stack(cols), ("CX~", "CL~", "M~", "2L~-X~", "L~-2X~"), nu=nu)


def stack(series: Sequence[GridSeries], label: str) -> np.ndarray:
    """(reps, len(grid)) array of one component across an ensemble of series."""
    return np.vstack([s[label] for s in series])
