"""Numerical toolkit for algebraic curvature tensors and pinching cones."""

from .tensor import (
    CurvatureTensor,
    SymBilinear,
    EllParams,
    SUPPORTED_DIMS,
    canonical_project,
    decompose,
    ell_ab,
    ell_ab_inverse,
    identity_tensor,
    inner,
    kulkarni_nomizu,
    metric,
    norm,
    q_map,
    random_orthogonal,
    random_tensor,
    ricci,
    rotate,
    scal,
    tilde_params,
    upsilon,
    zero_tensor,
)

__version__ = "0.1.0"
