"""Smooth distance on three boundary sets.

On the flat line the ratio D_beta / dist is a constant that depends only
on beta; on a Lipschitz graph it wobbles but stays bounded; near the
Cantor set it is comparable to the distance without being a multiple of it.
"""

import numpy as np

from codimlab.geometry import (SineProfile, make_cantor_garnett, make_flat,
                               make_lipschitz_graph)
from codimlab.smooth_distance import d_beta, flat_constant

rng = np.random.default_rng(0)
sets = {
    "flat line": make_flat(1, 3, 10, 0.01),
    "sine graph": make_lipschitz_graph(SineProfile(0.3), 0.3, 10, 0.01),
    "Cantor set": make_cantor_garnett(5),
}

print(f"flat constant for beta = 1: {flat_constant(1, 1.0):.6f} (1/pi = "
      f"{1 / np.pi:.6f})")
for name, bset in sets.items():
    base = bset.points[rng.choice(len(bset.points), 50)]
    offset = rng.normal(size=base.shape)
    offset *= rng.uniform(0.05, 0.5, (len(base), 1)) / np.linalg.norm(
        offset, axis=1, keepdims=True)
    X = base + offset
    ratio = d_beta(bset, 1.0, X).value / bset.distance(X)
    print(f"{name:11s} D/dist in [{ratio.min():.4f}, {ratio.max():.4f}]")
