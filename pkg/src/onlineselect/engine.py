"""Online selection dynamics.

Two equivalent representations are supported:

* markwise: atoms (t, x) of a planar scatter, accepted iff X < x <= X + psi(t, X);
* knapsack: atoms (t, u) of an increment reserve on [0,1] x [0, inf),
  accepted iff u <= psi(t, X(t-)), in which case X jumps by u.

The knapsack form lets several controls run on one reserve, which is how
paths of different strategies are compared pathwise.

The reserve has infinite mass, so it is realized lazily in canonical cells:
u-bands [0, w0), [w0, 2 w0), [2 w0, 4 w0), ... each cut into dyadic time
cells.  Each cell has its own random stream keyed by (stream_id, band, cell),
so the reserve restricted to any region does not depend on which controls
asked for it.  A cell is realized only if some control's window can reach its
lower u-edge during the cell's time span; atoms in unrealized cells lie above
every reachable window and could never be accepted.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import _kernels as kn
from .processes import GridSeries, default_grid
from .rng_core import RESERVE, SCATTER, Scatter, Seed
from .strategies import BoundConstants, ControlSpec, psi

CELL_TARGET = 128  # expected atoms per reserve cell


def _as_seed(seed) -> Seed:
    return seed if isinstance(seed, Seed) else Seed(int(seed))


@dataclass(frozen=True)
class SelectionPath:
    """Jump record of (X, L); X and L are right-continuous step functions."""

    nu: float
    x0: float
    times: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        if self.times.shape != self.marks.shape:
            raise ValueError("times and marks must have equal length")
        if self.times.size:
            if np.any(np.diff(self.times) <= 0) or self.times[0] <= 0 or self.times[-1] > 1:
                raise ValueError("jump times must be strictly increasing in (0, 1]")
            if np.any(np.diff(self.marks) <= 0) or self.marks[0] <= self.x0:
                raise ValueError("marks must be strictly increasing")

    @property
    def jumps(self) -> list[tuple[float, float, int]]:
        return [(t, x, i + 1) for i, (t, x) in enumerate(zip(self.times.tolist(), self.marks.tolist()))]

    @property
    def length(self) -> int:
        return int(self.times.size)

    @property
    def final_mark(self) -> float:
        return float(self.marks[-1]) if self.times.size else self.x0

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.marks, prepend=self.x0)

    def L(self, t) -> np.ndarray:
        return np.searchsorted(self.times, t, side="right")

    def X(self, t) -> np.ndarray:
        k = self.L(t)
        return np.where(k > 0, self.marks[np.maximum(k - 1, 0)], self.x0) if self.times.size else \
            np.full(np.shape(t), self.x0, dtype=float)

    def X_left(self, t) -> np.ndarray:
        """Left limit X(t-)."""
        k = np.searchsorted(self.times, t, side="left")
        if not self.times.size:
            return np.full(np.shape(t), self.x0, dtype=float)
        return np.where(k > 0, self.marks[np.maximum(k - 1, 0)], self.x0)

    def sample(self, grid) -> tuple[np.ndarray, np.ndarray]:
        grid = np.asarray(grid, dtype=float)
        return self.X(grid), self.L(grid).astype(float)


def _check_sorted(t: np.ndarray):
    if t.size and np.any(np.diff(t) < 0):
        raise ValueError("atoms must be sorted by time")


def select_markwise(control: ControlSpec, atoms: Scatter, x0: float = 0.0) -> SelectionPath:
    """Apply the acceptance rule x < x' <= x + psi(t, x) in one left-to-right pass."""
    if x0 >= 1.0 and control.feasible:
        raise ValueError("x0 must be below 1")
    _check_sorted(atoms.t)
    jt, jx = kn.select(control.kind, control.params, atoms.t, atoms.x, float(x0), True)
    return SelectionPath(control.nu, float(x0), jt, jx)


def select_knapsack(control: ControlSpec, reserve: Scatter, x0: float = 0.0) -> SelectionPath:
    """Drive (X, L) by a reserve of increments: at (t, u), jump by u iff u <= psi(t, X(t-))."""
    _check_sorted(reserve.t)
    if reserve.x.size and reserve.x.min() < 0:
        raise ValueError("reserve increments must be nonnegative")
    jt, jx = kn.select(control.kind, control.params, reserve.t, reserve.x, float(x0), False)
    return SelectionPath(control.nu, float(x0), jt, jx)


@dataclass(frozen=True)
class ReserveLayout:
    """Canonical cell geometry of the increment reserve for intensity nu."""

    nu: float
    target: int = CELL_TARGET

    @property
    def w0(self) -> float:
        return 2.0 * math.sqrt(2.0 / self.nu)

    def band(self, k: int) -> tuple[float, float]:
        if k == 0:
            return 0.0, self.w0
        return self.w0 * 2.0 ** (k - 1), self.w0 * 2.0 ** k

    def level(self, k: int) -> int:
        lo, hi = self.band(k)
        return max(0, math.ceil(math.log2(max(self.nu * (hi - lo) / self.target, 1.0))))


@lru_cache(maxsize=64)
def _plan_cached(layout: ReserveLayout, controls: tuple[ControlSpec, ...], x0: float):
    cells = []
    top = max(float(np.max(c.cap(np.array([0.0]), np.array([1.0]), x0))) for c in controls)
    k = 0
    while layout.band(k)[0] < top:
        j = layout.level(k)
        edges = np.arange(2 ** j + 1) / 2 ** j
        cap = np.zeros(2 ** j)
        for c in controls:
            cap = np.maximum(cap, c.cap(edges[:-1], edges[1:], x0))
        lo = layout.band(k)[0]
        for i in np.flatnonzero(cap > lo):
            cells.append((k, j, int(i)))
        k += 1
    return tuple(cells)


def reserve_plan(controls: Sequence[ControlSpec], x0: float = 0.0) -> tuple[ReserveLayout, tuple]:
    nus = {c.nu for c in controls}
    if len(nus) != 1:
        raise ValueError(f"controls must share one nu, got {sorted(nus)}")
    layout = ReserveLayout(nus.pop())
    return layout, _plan_cached(layout, tuple(controls), float(x0))


def realize_reserve(layout: ReserveLayout, cells, seed: Seed) -> Scatter:
    """Atoms of the reserve in the given cells, sorted by time."""
    ts, us = [], []
    for k, j, i in cells:
        lo, hi = layout.band(k)
        dt = 2.0 ** -j
        rng = seed.generator(RESERVE, k, i)
        n = rng.poisson(layout.nu * (hi - lo) * dt)
        ts.append((i + rng.random(n)) * dt)
        us.append(lo + (hi - lo) * rng.random(n))
    if not ts:
        return Scatter(np.empty(0), np.empty(0))
    t = np.concatenate(ts)
    u = np.concatenate(us)
    order = np.argsort(t, kind="stable")
    return Scatter(t[order], u[order])


def sample_reserve(controls: Sequence[ControlSpec], seed, x0: float = 0.0) -> Scatter:
    layout, cells = reserve_plan(controls, x0)
    return realize_reserve(layout, cells, _as_seed(seed))


def _markwise_path(control: ControlSpec, seed: Seed, x0: float) -> SelectionPath:
    # unit-height strips of marks [x0 + r, x0 + r + 1); extra strips are added
    # only when some reachable window pokes above the sampled ones
    strips_t, strips_x = [], []
    r = 0
    while True:
        rng = seed.generator(SCATTER, r)
        n = rng.poisson(control.nu)
        strips_t.append(rng.random(n))
        strips_x.append(x0 + r + rng.random(n))
        t = np.concatenate(strips_t)
        x = np.concatenate(strips_x)
        order = np.lexsort((x, t))
        path = select_markwise(control, Scatter(t[order], x[order]), x0)
        top = x0 + r + 1
        states = np.concatenate([[x0], path.marks])
        starts = np.concatenate([[0.0], path.times])
        reach = states + control.cap(starts, np.ones_like(starts), 0.0)
        reach = np.maximum(reach, states + control.cap(starts, np.ones_like(starts), x0))
        if reach.max() <= top:
            return path
        r += 1


def simulate_path(control: ControlSpec, seed, x0: float = 0.0, method: str = "knapsack") -> SelectionPath:
    seed = _as_seed(seed)
    if method == "knapsack":
        return select_knapsack(control, sample_reserve([control], seed, x0), x0)
    if method == "markwise":
        return _markwise_path(control, seed, x0)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class Ensemble:
    """Replicated selection paths sampled on a common grid."""

    control: ControlSpec
    grid: np.ndarray
    X: np.ndarray                 # (reps, len(grid))
    L: np.ndarray                 # (reps, len(grid))
    paths: list[SelectionPath] | None = None
    seed: Seed | None = None

    @property
    def nu(self) -> float:
        return self.control.nu

    @property
    def reps(self) -> int:
        return self.X.shape[0]

    @property
    def X_tilde(self) -> np.ndarray:
        return self.nu ** 0.25 * (self.X - self.grid)

    @property
    def L_tilde(self) -> np.ndarray:
        return self.nu ** 0.25 * (self.L / math.sqrt(2 * self.nu) - self.grid)

    def terminal(self) -> tuple[np.ndarray, np.ndarray]:
        """X(1) and L(1) per replicate."""
        if self.paths is not None:
            return (np.array([p.final_mark for p in self.paths]),
                    np.array([p.length for p in self.paths], dtype=float))
        if self.grid[-1] != 1.0:
            raise ValueError("terminal values need the grid to end at 1 or kept paths")
        return self.X[:, -1], self.L[:, -1]


def simulate(control: ControlSpec, reps: int, seed=0, grid=None, x0: float = 0.0,
             method: str = "knapsack", keep_paths: bool = True, threads: int = 1) -> Ensemble:
    """Independent replicates; replicate r uses stream ``seed.stream_id + r``."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    seed = _as_seed(seed)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if method == "knapsack":
        layout, cells = reserve_plan([control], x0)

        def one(r):
            s = seed.stream(seed.stream_id + r)
            return select_knapsack(control, realize_reserve(layout, cells, s), x0)
    else:
        def one(r):
            return simulate_path(control, seed.stream(seed.stream_id + r), x0, method)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            paths = list(pool.map(one, range(reps)))
    else:
        paths = [one(r) for r in range(reps)]
    X = np.empty((reps, grid.size))
    L = np.empty((reps, grid.size))
    for r, p in enumerate(paths):
        X[r], L[r] = p.sample(grid)
    return Ensemble(control, grid, X, L, paths if keep_paths else None, seed)


@dataclass(frozen=True)
class CoupledBundle:
    reserve_seed: Seed
    controls: tuple[ControlSpec, ...]
    paths: tuple[SelectionPath, ...]
    containment: dict = field(default_factory=dict)


def containment_audit(controls: Sequence[ControlSpec], paths: Sequence[SelectionPath]) -> dict:
    """Per accepted atom: if the accepting process had the smaller window, the other must accept too."""
    checked = violations = 0
    for i, (ci, pi) in enumerate(zip(controls, paths)):
        incs = pi.increments
        for j, (cj, pj) in enumerate(zip(controls, paths)):
            if i == j or not pi.length:
                continue
            wi = psi(ci, pi.times, pi.X_left(pi.times))
            wj = psi(cj, pi.times, pj.X_left(pi.times))
            smaller = wi <= wj
            checked += int(smaller.sum())
            k = np.searchsorted(pj.times, pi.times[smaller])
            hit = k < pj.length
            same = np.zeros(k.shape, dtype=bool)
            same[hit] = (pj.times[k[hit]] == pi.times[smaller][hit]) & \
                np.isclose(pj.increments[k[hit]], incs[smaller][hit], rtol=0, atol=1e-12)
            violations += int((~same).sum())
    return {"checked": checked, "violations": violations}


def run_coupled(controls: Sequence[ControlSpec], nu: float, seed, x0: float = 0.0) -> CoupledBundle:
    """Run every control on one shared increment reserve."""
    controls = tuple(controls)
    if len(controls) < 2:
        raise ValueError("coupling needs at least two controls")
    if any(c.nu != nu for c in controls):
        raise ValueError("all controls must use the bundle's nu")
    seed = _as_seed(seed)
    reserve = sample_reserve(controls, seed, x0)
    paths = tuple(select_knapsack(c, reserve, x0) for c in controls)
    return CoupledBundle(seed, controls, paths, containment_audit(controls, paths))


def dominates(upper: SelectionPath, lower: SelectionPath) -> bool:
    """X_upper(t) >= X_lower(t) for all t (both are step functions)."""
    times = np.union1d(upper.times, lower.times)
    if not times.size:
        return upper.x0 >= lower.x0
    return bool(upper.x0 >= lower.x0 and np.all(upper.X(times) >= lower.X(times)))


def majorant_control(nu: float, constants: BoundConstants) -> ControlSpec:
    return ControlSpec("majorant", nu, beta=constants.beta, K=constants.K)


def minorant_control(nu: float, constants: BoundConstants) -> ControlSpec:
    return ControlSpec("minorant", nu, beta=constants.beta, K=constants.K)


@dataclass(frozen=True)
class MajorantPath:
    """X_up(t) = t + K/sqrt(nu) + S(t) - min(0, inf_{u<=t} S(u)),  S(t) = accepted increments - t."""

    nu: float
    offset: float
    times: np.ndarray
    increments: np.ndarray
    _cum: np.ndarray = field(init=False, repr=False)
    _runmin: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cum = np.cumsum(self.increments)
        before = np.concatenate([[0.0], cum[:-1]]) - self.times   # S(tau-) at each jump
        object.__setattr__(self, "_cum", cum)
        object.__setattr__(self, "_runmin", np.minimum.accumulate(np.concatenate([[0.0], before])))

    def S(self, t) -> np.ndarray:
        k = np.searchsorted(self.times, t, side="right")
        c = np.where(k > 0, self._cum[np.maximum(k - 1, 0)], 0.0) if self.times.size else np.zeros(np.shape(t))
        return c - np.asarray(t, dtype=float)

    def reflected(self, t) -> np.ndarray:
        """X_up(t) - t - offset, the Skorokhod reflection of S at its running minimum."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        s = self.S(t)
        inf = np.minimum(self._runmin[k], s)
        return s - inf

    def X(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return t + self.offset + self.reflected(t)


def _majorant_from_reserve(nu, constants, reserve: Scatter) -> MajorantPath:
    path = select_knapsack(majorant_control(nu, constants), reserve, 0.0)
    return MajorantPath(nu, constants.K / math.sqrt(nu), path.times, path.increments)


def majorant_path(nu: float, constants: BoundConstants, seed) -> MajorantPath:
    return _majorant_from_reserve(nu, constants, sample_reserve([majorant_control(nu, constants)], seed))


def run_majorant(nu: float, constants: BoundConstants, seed, grid=None) -> GridSeries:
    """Grid series of X_up(t) - t."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    mp = majorant_path(nu, constants, seed)
    return GridSeries(grid, (mp.X(grid) - grid)[:, None], ("Xup-t",), nu=nu)


def minorant_path(nu: float, constants: BoundConstants, seed) -> SelectionPath:
    c = minorant_control(nu, constants)
    return select_knapsack(c, sample_reserve([c], seed), 0.0)


def run_minorant(nu: float, constants: BoundConstants, seed, grid=None) -> GridSeries:
    """Grid series of X_down(t) - t; frozen after 1 - K/sqrt(nu)."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    p = minorant_path(nu, constants, seed)
    return GridSeries(grid, (p.X(grid) - grid)[:, None], ("Xdown-t",), nu=nu)


@dataclass(frozen=True)
class SandwichResult:
    lower_ok: bool
    upper_ok: bool
    lower_margin: float      # min over t of X - X_down
    upper_margin: float      # min over t of X_up - X
    path: SelectionPath
    minorant: SelectionPath
    majorant: MajorantPath

    @property
    def ok(self) -> bool:
        return self.lower_ok and self.upper_ok


def sandwich(control: ControlSpec, constants: BoundConstants, seed) -> SandwichResult:
    """Run X, X_down, X_up on one reserve and check X_down <= X <= X_up pathwise.

    X_up is nondecreasing between jumps of X, so checking at the jump times of
    X (and at 0) is exact; both X and X_down are step functions, so the union
    of their jump times suffices for the lower side.
    """
    nu = control.nu
    up_c, down_c = majorant_control(nu, constants), minorant_control(nu, constants)
    reserve = sample_reserve([control, up_c, down_c], seed)
    x = select_knapsack(control, reserve)
    down = select_knapsack(down_c, reserve)
    up = _majorant_from_reserve(nu, constants, reserve)
    pts = np.union1d(np.union1d(x.times, down.times), [0.0])
    lower = x.X(pts) - down.X(pts)
    upts = np.union1d(x.times, [0.0])
    upper = up.X(upts) - x.X(upts)
    return SandwichResult(bool(lower.min() >= 0), bool(upper.min() >= 0), float(lower.min()),
                          float(upper.min()), x, down, up)
