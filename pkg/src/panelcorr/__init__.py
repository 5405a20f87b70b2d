"""Two-way fixed-effect nonlinear panels with an analytical likelihood correction."""

from .correction import (CorrectionTerms, corrected_loglik, corrected_loglik_trace,
                         corrected_score_and_hessian, correction_terms)
from .exceptions import (BadFamilyData, ConfigError, DegenerateVariance,
                         DuplicateCell, EmptyPanel, IndefiniteHessian,
                         NoConvergence, NonFiniteIndex, NonNegativeHessian,
                         NonNumericField, NumericalError, PanelCorrError,
                         RankDeficientConstraint, SingularBlock, SingularHessian,
                         TauTooLarge, UnbalancedPanel)
from .inference import (Constraint, EstimateResult, TestResult, maximize,
                        standard_errors, test, test_all)
from .model import (DerivBundle, IndexModel, ModelSpec, PanelData, obs_derivs,
                    obs_loglik)
from .profiler import (ProfileOptions, ProfileResult, SanitizeReport,
                       profile_fixed_effects, profiled_value_and_score,
                       sanitize_panel)

__version__ = "0.1.0"

__all__ = [
    "BadFamilyData", "ConfigError", "Constraint", "CorrectionTerms",
    "DegenerateVariance", "DerivBundle", "DuplicateCell", "EmptyPanel",
    "EstimateResult", "IndefiniteHessian", "IndexModel", "ModelSpec",
    "NoConvergence", "NonFiniteIndex", "NonNegativeHessian", "NonNumericField",
    "NumericalError", "PanelCorrError", "PanelData", "ProfileOptions",
    "ProfileResult", "RankDeficientConstraint", "SanitizeReport", "SingularBlock",
    "SingularHessian", "TauTooLarge", "TestResult", "UnbalancedPanel",
    "corrected_loglik", "corrected_loglik_trace", "corrected_score_and_hessian",
    "correction_terms", "maximize", "obs_derivs", "obs_loglik",
    "profile_fixed_effects", "profiled_value_and_score", "sanitize_panel",
    "standard_errors", "test", "test_all",
]
