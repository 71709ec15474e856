"""Compiled inner loops.  Controls are passed as ``(kind, params)`` pairs.

params[0] is always the intensity nu; the remaining slots depend on kind:

    GREEDY               -
    CONSTANT             params[1] = window width
    FEASIBLE_STATIONARY  -
    SELF_SIMILAR         params[1] = c, delta(m) = clip(sqrt(2/m) + c/m, 0, 1)
    MAJORANT             params[1] = beta, params[2] = K
    MINORANT             params[1] = beta, params[2] = K
"""
import math

import numpy as np
from numba import njit

GREEDY = 0
CONSTANT = 1
FEASIBLE_STATIONARY = 2
SELF_SIMILAR = 3
MAJORANT = 4
MINORANT = 5


@njit(cache=True, nogil=True)
def delta_scalar(c, m):
    if m <= 0.0:
        return 1.0
    v = math.sqrt(2.0 / m) + c / m
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


@njit(cache=True, nogil=True)
def psi_scalar(kind, p, t, x):
    nu = p[0]
    if t >= 1.0:
        return 0.0
    if kind == GREEDY:
        return 1.0 - x if x < 1.0 else 0.0
    if kind == CONSTANT:
        return p[1]
    if kind == FEASIBLE_STATIONARY:
        if x >= 1.0:
            return 0.0
        return min(math.sqrt(2.0 / nu), 1.0 - x)
    if kind == SELF_SIMILAR:
        if x >= 1.0:
            return 0.0
        return (1.0 - x) * delta_scalar(p[1], nu * (1.0 - t) * (1.0 - x))
    cut = 1.0 - p[2] / math.sqrt(nu)
    if kind == MAJORANT:
        w = math.sqrt(2.0 / nu)
        if t <= cut:
            w += p[1] / (nu * (1.0 - t))
        return w
    if kind == MINORANT:
        if t > cut:
            return 0.0
        w = min(math.sqrt(2.0 / nu) - p[1] / (nu * (1.0 - t)), t - x)
        return w if w > 0.0 else 0.0
    return math.nan


@njit(cache=True, nogil=True)
def psi_array(kind, p, t, x):
    out = np.empty(t.shape[0])
    for i in range(t.shape[0]):
        out[i] = psi_scalar(kind, p, t[i], x[i])
    return out


@njit(cache=True, nogil=True)
def delta_array(c, m):
    out = np.empty(m.shape[0])
    for i in range(m.shape[0]):
        out[i] = delta_scalar(c, m[i])
    return out


@njit(cache=True, nogil=True)
def select(kind, p, ts, us, x0, markwise):
    """One online pass over time-sorted atoms.

    Knapsack mode: ``us`` are increments, accepted iff u <= psi(t, X(t-)).
    Markwise mode: ``us`` are marks, accepted iff X < u <= X + psi(t, X).
    Returns jump times and post-jump marks.
    """
    n = ts.shape[0]
    jt = np.empty(n)
    jx = np.empty(n)
    x = x0
    k = 0
    for i in range(n):
        t = ts[i]
        if markwise:
            inc = us[i] - x
        else:
            inc = us[i]
        if inc <= 0.0:
            continue
        if inc <= psi_scalar(kind, p, t, x):
            x += inc
            jt[k] = t
            jx[k] = x
            k += 1
    return jt[:k].copy(), jx[:k].copy()
