"""Green function at infinity and harmonic measure for the flat line.

Solves the degenerate problem on a 48^3 grid, checks that G / D^(1-gamma)
is nearly constant away from the box wall, and splits the harmonic
measure of the tube seen from a pole above the origin into four patches
covering [-2, 2].  The rest of the tube and the outer wall share the
remainder; in codimension two the wall keeps a noticeable share.
"""

import numpy as np

from codimlab.geometry import make_flat
from codimlab.solver import (Grid, green_infinity, harmonic_masses,
                             patch_mask)
from codimlab.smooth_distance import OperatorParams

bset = make_flat(1, 3, 10, 0.04)
grid = Grid.build(bset, 4.0, 48)
for gamma in (0.0, 0.5, -0.5):
    params = OperatorParams(beta=1.0, gamma=gamma)
    G = green_infinity(grid, params)
    X = grid.centers()
    inner = (np.abs(X).max(axis=1) <= 2.0) & (grid.dist.ravel() > 0.3)
    ratio = G.values[inner] / G.D[inner] ** (1 - gamma)
    print(f"gamma {gamma:+.1f}: G / D^(1-gamma) spread "
          f"{ratio.max() / ratio.min() - 1:.2%}, "
          f"{G.report['iterations']} CG iterations")

params = OperatorParams(beta=1.0, gamma=0.0)
pole = grid.centers(grid.cell_of(np.array([[0.01, 1.0, 0.01]])))[0]
masses = harmonic_masses(grid, params, pole)
parts = []
for c in (-1.5, -0.5, 0.5, 1.5):
    c += pole[0]
    patch = patch_mask(grid, np.array([c, 0.0, 0.0]), 0.5)
    parts.append(masses.of_cells(patch))
print("patch masses:", " ".join(f"{p:.4f}" for p in parts),
      f"(sum {sum(parts):.4f})")
print(f"whole tube {masses.total:.4f}, leakage {1 - masses.total:.4f}")
