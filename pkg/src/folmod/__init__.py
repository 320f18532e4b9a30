"""p-modulus of foliations on two-dimensional Riemannian charts.

Set ``FOLMOD_THREADS`` before import to cap the thread pools of numba and
the BLAS libraries behind numpy.
"""

import os as _os

_threads = _os.environ.get("FOLMOD_THREADS")
if _threads:
    for _var in ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS"):
        _os.environ[_var] = _threads

from .expr import EvalError, ParseError, evaluate, parse, to_source  # noqa: E402
from .geometry import (  # noqa: E402
    ChartQuadrature,
    Curve,
    ExprField,
    FunctionField,
    GeometryError,
    GridField,
    MetricChart,
    Support,
    VectorField,
    curve_mean_curvature,
    gradient,
    integrate_chart,
    integrate_curve,
)
from .foliation import (  # noqa: E402
    LeafFamily,
    SubmersionFoliation,
    admissibility_diagnostics,
    extremal_closed_form,
    integral_identity_residual,
    modulus_closed_form,
    trace_leaf,
)
from .solver import SolverResult, assemble, solve  # noqa: E402
from .variation import (  # noqa: E402
    Flow,
    FlowedFoliation,
    VariationReport,
    divflow_residual,
    flow_point,
    leaf_jacobian,
    variation_analytic,
    variation_fd,
    variation_linearity_check,
)
from .critical import (  # noqa: E402
    OrthogonalFoliation,
    OrthogonalPair,
    criticality_residual,
    pair_holder_integral,
    pair_product_residual,
    pair_product_value,
    tangent_gradient_residual,
)

__version__ = "0.1.0"
