"""Grassmann/Berezin engine and executable checks of supersymmetric identities."""

from .gaussian import GPFunction, Poly, d_operator, d_tilde, index_pairs, integrate_phi
from .grassmann import (
    GENERATOR_CAP,
    GrassmannElement,
    SuperLayout,
    berezin_integrate,
    bilinear,
    grassmann_multiply,
    product_sign,
    psi_square,
)
from .identities import (
    DEFAULT_SIZES,
    THRESHOLDS,
    ScopeError,
    SuiteRecord,
    T_transform,
    check_scope,
    run_suite,
    super_taylor,
    super_taylor_direct,
    superintegral,
    verify_flat_integral,
    verify_leibniz,
    verify_sup_identity,
    verify_susy_gaussian_integral,
    verify_T_gaussian,
    verify_T_involution,
    verify_taylor_direct,
)

__all__ = [
    "DEFAULT_SIZES",
    "GENERATOR_CAP",
    "GPFunction",
    "GrassmannElement",
    "Poly",
    "ScopeError",
    "SuiteRecord",
    "SuperLayout",
    "THRESHOLDS",
    "T_transform",
    "berezin_integrate",
    "bilinear",
    "check_scope",
    "d_operator",
    "d_tilde",
    "grassmann_multiply",
    "index_pairs",
    "integrate_phi",
    "product_sign",
    "psi_square",
    "run_suite",
    "super_taylor",
    "super_taylor_direct",
    "superintegral",
    "verify_flat_integral",
    "verify_leibniz",
    "verify_sup_identity",
    "verify_susy_gaussian_integral",
    "verify_T_gaussian",
    "verify_T_involution",
    "verify_taylor_direct",
]
