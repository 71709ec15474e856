"""Seedable random sources: Poisson scatters and correlated Brownian increments.

Every random draw in the package goes through :class:`Seed`.  A seed is a
``(value, stream_id)`` pair; the stream id is normally the replicate index.
Sub-streams for particular purposes (scatter, reserve cell, Brownian
increments) are derived with :class:`numpy.random.SeedSequence` spawn keys,
so any replicate can be regenerated on its own without replaying others.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

# spawn-key purpose tags
SCATTER = 0
RESERVE = 1
BROWNIAN = 2
GENERIC = 3

_U64 = 2**64


@dataclass(frozen=True)
class Seed:
    value: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("value", "stream_id"):
            v = getattr(self, name)
            if not (0 <= int(v) < _U64):
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v}")

    def sequence(self, *purpose: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(int(self.value), spawn_key=(int(self.stream_id), *map(int, purpose)))

    def generator(self, *purpose: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.sequence(*purpose)))

    def stream(self, stream_id: int) -> "Seed":
        return Seed(self.value, stream_id)


class Atom(NamedTuple):
    t: float
    x: float


@dataclass(frozen=True)
class Scatter:
    """Atoms of a planar Poisson scatter, sorted by time."""

    t: np.ndarray
    x: np.ndarray

    def __len__(self) -> int:
        return self.t.shape[0]

    def __iter__(self) -> Iterator[Atom]:
        for t, x in zip(self.t.tolist(), self.x.tolist()):
            yield Atom(t, x)

    def __getitem__(self, i) -> Atom:
        return Atom(float(self.t[i]), float(self.x[i]))

    @classmethod
    def from_atoms(cls, atoms: Sequence[Sequence[float]]) -> "Scatter":
        arr = np.asarray(atoms, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0].copy(), arr[:, 1].copy())


def _sorted_scatter(t: np.ndarray, x: np.ndarray) -> Scatter:
    order = np.lexsort((x, t))
    return Scatter(t[order], x[order])


def sample_scatter(nu: float, region=((0.0, 1.0), (0.0, 1.0)), seed: Seed = Seed(0),
                   rng: np.random.Generator | None = None) -> Scatter:
    """Homogeneous Poisson scatter of intensity ``nu`` on a rectangle.

    ``region`` is ``((t0, t1), (x0, x1))``.  The count is drawn first, then the
    points are placed uniformly and sorted by time (ties by mark).
    """
    if not np.isfinite(nu) or nu < 0:
        raise ValueError(f"intensity must be finite and nonnegative, got {nu}")
    (t0, t1), (x0, x1) = region
    if not (t1 > t0 and x1 > x0):
        raise ValueError(f"degenerate region {region}")
    if rng is None:
        rng = seed.generator(SCATTER)
    n = rng.poisson(nu * (t1 - t0) * (x1 - x0))
    t = t0 + (t1 - t0) * rng.random(n)
    x = x0 + (x1 - x0) * rng.random(n)
    return _sorted_scatter(t, x)


def sqrt_factor(cov) -> np.ndarray:
    """Square-root factor ``F`` with ``F @ F.T == cov``.

    Lower Cholesky when possible; symmetric eigendecomposition for singular
    positive semi-definite input.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
        raise ValueError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(cov)
    tol = 1e-12 * max(1.0, float(np.abs(w).max()))
    if w.min() < -tol:
        raise ValueError(f"covariance is not positive semi-definite (eigenvalue {w.min():.3g})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def sample_correlated_bm(grid, cov, seed: Seed = Seed(0), reps: int | None = None) -> np.ndarray:
    """Two-dimensional Brownian motion with per-unit-time covariance ``cov``.

    Returns an array of shape ``(len(grid), 2)``, or ``(reps, len(grid), 2)``
    when ``reps`` is given.  The grid must start at 0.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0:
        raise ValueError("grid must be a 1-d array starting at 0")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    factor = sqrt_factor(cov)
    d = factor.shape[0]
    rng = seed.generator(BROWNIAN)
    shape = (1 if reps is None else reps, grid.size - 1, d)
    z = rng.standard_normal(shape)
    steps = (z @ factor.T) * np.sqrt(np.diff(grid))[None, :, None]
    out = np.zeros((shape[0], grid.size, d))
    np.cumsum(steps, axis=1, out=out[:, 1:, :])
    return out[0] if reps is None else out
