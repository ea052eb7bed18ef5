"""Bifurcation toolkit for the coupled saddle-node normal form."""

from .normal_form import (
    Params,
    State,
    CaseInfo,
    SingularParametrizationError,
    DegenerateCouplingError,
    eval_field,
    eval_jacobian,
    lambda_tr0,
    apply_symmetry,
    classify_case,
)
from .analytic_loci import (
    HopfInfo,
    SNLocusPoint,
    trace_zero_point,
    takens_bogdanov_gammas,
    cusp_point,
    saddle_node_locus,
)
from .equilibria import (
    EquilibriumInfo,
    NullEigenData,
    find_equilibria,
    classify,
    null_eigen_data,
)

__version__ = "0.1.0"
