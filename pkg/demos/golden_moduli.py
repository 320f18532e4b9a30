"""Closed-form moduli of the golden foliations, next to the convex solver.

Run with ``python demos/golden_moduli.py``.  Prints one row per case: the
closed-form modulus, the analytic value and the solver's discrete modulus.
"""

import numpy as np

from folmod import MetricChart, SubmersionFoliation, modulus_closed_form
from folmod.solver import solver_extremal_vs_closed_form

annulus = MetricChart.annulus(1.0, np.e)
rect = MetricChart.rectangle(2.0, 1.0)

cases = [
    ("annulus, circles", annulus, "u", 2, 1 / np.sqrt(2 * np.pi)),
    ("annulus, radial lines", annulus, "v", 2, np.sqrt(2 * np.pi)),
    ("rectangle, horizontal", rect, "v", 2, 2 ** -0.5),
    ("rectangle, horizontal", rect, "v", 3, 0.25 ** (1 / 3)),
]

print(f"{'case':26s} {'p':>3s} {'closed form':>13s} {'analytic':>13s} {'solver':>13s}")
for name, chart, phi, p, exact in cases:
    fol = SubmersionFoliation(chart, phi)
    closed = modulus_closed_form(fol, p)
    # a coarse solve keeps the demo quick; the acceptance suite uses 96x96
    res = solver_extremal_vs_closed_form(fol, p, grid=(48, 48), n_leaves=48)["result"]
    print(f"{name:26s} {p:3d} {closed:13.9f} {exact:13.9f} {res.modulus:13.9f}")
