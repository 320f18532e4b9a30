"""First variation of mod_p**p under a bump field, two ways.

The analytic side integrates ``f0**(p-1) (g(grad f0, X) + f0 div_F X)``;
the finite-difference side pushes the foliation by the flow of ``X`` and
differences the moduli.  On the wavy rectangle the two agree to about
``1e-5`` relative.  The straight horizontal lines are critical, so the true
variation vanishes; at these default resolutions both sides land near
``1e-8``, and the acceptance suite refines the grid and level table until
they agree below ``1e-10``.
"""

from folmod import MetricChart, SubmersionFoliation, Support, VectorField
from folmod.variation import variation_fd

rect = MetricChart.rectangle(2.0, 1.0)
X = VectorField("1", "0.5", Support((0.7, 0.4), 0.1, 0.3))

for phi in ("v+0.1*sin(pi*u)*sin(pi*v)", "v"):
    fol = SubmersionFoliation(rect, phi)
    rep = variation_fd(fol, 2, X, grid=(128, 128))
    print(f"phi = {phi}")
    print(f"  analytic           {rep.analytic: .8e}")
    print(f"  finite difference  {rep.finite_difference: .8e}  (+/- {rep.richardson_error:.1e})")
    print(f"  relative gap       {rep.relative_gap:.2e}")
