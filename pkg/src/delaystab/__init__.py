"""Stability certificates and simulation for a coupled delay system.

    x'' + a1 x'(h1) + a2 x(h2) + a3 u(h3) = f1
    u'  + b1 u(g1)  + b2 x(g2)            = f2
"""

__version__ = "0.1.0"

from .expr import ExprError, evaluate, evaluate_array, parse, to_source  # noqa: E402
from .model import (  # noqa: E402
    CoefficientSpec,
    DelaySpec,
    NormMode,
    NormTable,
    SystemSpec,
    norm_bounds,
    validate,
)
from .stability import (  # noqa: E402
    Certificate,
    StabilityMatrix,
    Verdict,
    build_matrix,
    certify_corollary31,
    certify_theorem31,
    check_first_order,
    is_m_matrix,
    spectral_radius,
)
from .simulate import (  # noqa: E402
    ForcingSpec,
    InitialData,
    Trajectory,
    bohl_perron_probe,
    check_lemma23,
    fundamental_function,
    integrate,
    verify_apriori,
)
from .decay import DecayEstimate, estimate_decay  # noqa: E402

__all__ = [
    "CoefficientSpec", "DelaySpec", "NormMode", "NormTable", "SystemSpec", "norm_bounds",
    "validate", "ExprError", "parse", "to_source", "evaluate", "evaluate_array",
    "Certificate", "StabilityMatrix", "Verdict", "build_matrix", "certify_theorem31",
    "certify_corollary31", "check_first_order", "is_m_matrix", "spectral_radius",
    "ForcingSpec", "InitialData", "Trajectory", "integrate", "fundamental_function",
    "check_lemma23", "bohl_perron_probe", "verify_apriori", "DecayEstimate",
    "estimate_decay",
]
