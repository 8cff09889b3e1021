"""Numerical Finsler geometry on charts: jets, sprays, curvature algebras and holonomy."""
from .errors import (ConfigError, ConsistencyFailure, DomainError, FinslerError,
                     IndicatrixSolveError, IntegrationUnstable, InvalidMetric, MetricDegenerate,
                     NotConstantCurvature, SlitViolation, TangencyError, UnsupportedOrder)
from .fields import (Bracket, CovariantDerivative, CurvatureField, ExplicitField, FieldContext,
                     VerticalField, covariant_derivative, curvature_field, vertical_bracket)
from .holonomy import (affine_factor_test, function_independence_rank, generate_algebra,
                       indicatrix_parametrize, numerical_rank, restrict_to_indicatrix,
                       surface_identity_check)
from .jets import Jet, ScalarFunction, fd_check, jet_eval
from .metrics import (MetricSpec, berwald_flat, catalog_ids, domain_contains, euclidean,
                      finsler_value, funk, get_metric, klein, register_metric, unregister_metric)
from .spray import (flag_curvature_fit, fundamental_tensor, geodesic_coefficients,
                    homogeneity_ladder, projective_factor, projective_flatness_residual,
                    projective_identity_residuals, rapcsak_residual, riemann_curvature)
from .transport import ChartCurve, curvature_from_loops, loop_holonomy, transport_along

__version__ = "0.1.0"
