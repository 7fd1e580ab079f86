"""Numerical laboratory for damped wave equations with time-dependent friction and viscoelastic damping."""
__version__ = "0.1.0"

from .coeffcalc import CoefficientProfile, big_G, log_delta, make_profile, profile_from_spec  # noqa: E402
from .classify import check_conditions, classify_friction  # noqa: E402
from .zones import make_layout, region_of, separating_time, zone_chain, zone_of  # noqa: E402
from .modes import check_transforms, fundamental_matrix, mode_limit, solve_mode, solve_modes  # noqa: E402
from .envelopes import (EnvelopeSpec, glue_mode_envelope, mode_bound, multiplier_check,  # noqa: E402
                        multiplier_decay_check, pointwise_inequality_suite, symbol_integrability,
                        theorem_envelope)
from .norms import DataProfile, NormRequest, data_norm, ratio_series, sobolev_norm  # noqa: E402

__all__ = [
    "CoefficientProfile", "DataProfile", "EnvelopeSpec", "NormRequest", "big_G", "check_conditions",
    "check_transforms", "classify_friction", "data_norm", "fundamental_matrix", "glue_mode_envelope",
    "log_delta", "make_layout", "make_profile", "mode_bound", "mode_limit", "multiplier_check",
    "multiplier_decay_check", "pointwise_inequality_suite", "profile_from_spec", "ratio_series",
    "region_of", "separating_time", "solve_mode", "solve_modes", "sobolev_norm", "symbol_integrability",
    "theorem_envelope", "zone_chain", "zone_of",
]
