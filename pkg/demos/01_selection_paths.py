"""Single selection paths: how the running maximum and length grow.

Samples one path for each control at nu = 10^4 and prints the normalised
processes on a coarse grid, then the squeeze constants of the optimal control.
"""
from __future__ import annotations

import numpy as np

from onlineselect.engine import simulate_path
from onlineselect.processes import normalize
from onlineselect.strategies import FeasibleStationary, Greedy, SelfSimilar, Stationary, calibrate_beta

nu = 1e4
grid = np.linspace(0, 1, 6)
for control in (Greedy(nu), Stationary(nu), FeasibleStationary(nu), SelfSimilar(nu)):
    path = simulate_path(control, seed=1)
    s = normalize(path, grid)
    print(f"{control.variant:>18}: L(1) = {path.L(1.0):4d}, "
          f"X~ = {np.round(s['X~'], 3)}, L~ = {np.round(s['L~'], 3)}")

bc = calibrate_beta(SelfSimilar(nu))
print(f"\noptimal control squeeze: beta- = {bc.beta_minus:.4f}, beta+ = {bc.beta_plus:.4f}, "
      f"beta = {bc.beta:.2f}, K = {bc.K:.2f}")
