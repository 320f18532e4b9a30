"""Moduli of a foliation and its orthogonal foliation.

For the concentric circles of an annulus the orthogonal foliation is built
numerically from the normal field (its leaves are the radial lines), and
``mod_2(F) * mod_2(F_perp)`` comes out as 1.  A tilted foliation of the
rectangle is not critical; its product falls below 1 and Hoelder's bound
``int f0 g0 <= mod_p * mod_q`` is strict.
"""

import numpy as np

from folmod import MetricChart, SubmersionFoliation
from folmod.critical import (
    OrthogonalPair,
    criticality_residual,
    pair_holder_integral,
    pair_product_residual,
    pair_product_value,
)

cases = [
    ("annulus circles", MetricChart.annulus(1.0, np.e), "u"),
    ("tilted rectangle", MetricChart.rectangle(2.0, 1.0), "v+0.05*cos(pi*u)*sin(pi*v)"),
]

for name, chart, phi in cases:
    F = SubmersionFoliation(chart, phi)
    pair = OrthogonalPair.from_foliation(F, 2)
    print(name)
    print(f"  criticality residual of F   {criticality_residual(F, 2):.2e}")
    print(f"  mod(F) * mod(F_perp)        {pair_product_value(pair):.8f}")
    print(f"  int f0 g0                   {pair_holder_integral(pair):.8f}")
    print(f"  pointwise product residual  {pair_product_residual(pair):.2e}")
