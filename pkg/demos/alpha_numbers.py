"""Alpha numbers separate flat sets from fragmented ones.

For each set the script prints the alpha number of a unit ball at three
dyadic scales.  The flat line stays at zero, the graph stays an order
of magnitude below the Cantor set, and the Cantor set keeps a roughly
constant amount of non-flatness at every scale.
"""

from codimlab.alpha import alpha_number
from codimlab.geometry import (SineProfile, make_cantor_garnett, make_flat,
                               make_lipschitz_graph)

flat = make_flat(1, 3, 8, 0.01)
graph = make_lipschitz_graph(SineProfile(0.3), 0.3, 8, 0.01)
cantor = make_cantor_garnett(5)

cases = [("flat line", flat, flat.points[len(flat.points) // 2], 1.0),
         ("sine graph", graph, graph.points[len(graph.points) // 2], 1.0),
         ("Cantor set", cantor, cantor.points[0], 0.25)]
for name, bset, x, r in cases:
    vals = [alpha_number(bset, x, r * 2.0 ** -k).value for k in range(3)]
    print(f"{name:11s} " + "  ".join(f"{v:.4f}" for v in vals))
