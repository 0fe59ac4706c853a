"""p-harmonic coordinate charts and conformal distortion checks on Riemannian charts."""

__version__ = "0.1.0"

from .aop import (AOperator, StructuralReport, dirichlet_energy, estimate_structural_constants,
                  make_aoperator, weak_residual)
from .conformal import (DistortionReport, chain_rule_check, distortion, factor_map,
                        localization_bound, pullback_nharmonic_residual, substitution_check)
from .coords import (ChartRequest, ChartResult, RateStudy, build_chart, jacobian_at_center,
                     pushforward_metric, rate_study)
from .geometry import (ChristoffelField, MetricField, SampledMap, christoffel,
                       christoffel_pharmonic_residual, inverse_and_det, pullback_metric)
from .grid import (DiscreteBall, DiscreteScalarField, NormReport, gradient, holder_seminorm,
                   interpolation_bound, lp_norm, make_ball, second_difference_bound, w1p_norm)
from .solver import (DirichletSolution, SolverConfig, gradient_nonvanishing_region,
                     rescale_to_unit_ball, solve_dirichlet)

__all__ = [
    "AOperator",
    "ChartRequest",
    "ChartResult",
    "ChristoffelField",
    "DirichletSolution",
    "DiscreteBall",
    "DiscreteScalarField",
    "DistortionReport",
    "MetricField",
    "NormReport",
    "RateStudy",
    "SampledMap",
    "SolverConfig",
    "StructuralReport",
    "build_chart",
    "chain_rule_check",
    "christoffel",
    "christoffel_pharmonic_residual",
    "dirichlet_energy",
    "distortion",
    "estimate_structural_constants",
    "factor_map",
    "gradient",
    "gradient_nonvanishing_region",
    "holder_seminorm",
    "interpolation_bound",
    "inverse_and_det",
    "jacobian_at_center",
    "localization_bound",
    "lp_norm",
    "make_aoperator",
    "make_ball",
    "pullback_metric",
    "pullback_nharmonic_residual",
    "pushforward_metric",
    "rate_study",
    "rescale_to_unit_ball",
    "second_difference_bound",
    "solve_dirichlet",
    "substitution_check",
    "w1p_norm",
    "weak_residual",
]
