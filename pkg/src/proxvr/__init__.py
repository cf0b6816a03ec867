"""Proximal variance-reduced solvers with local-structure analysis.

Public surface: finite-sum problems and instance generation, partly smooth
penalties, the four Forward-Backward solvers, local certification and rate
prediction, post-identification acceleration, and the experiment harness.
"""

from .problems import (FiniteSumProblem, InstanceSpec, diagonal_lasso_3d,
                       generate_instance, least_squares_problem,
                       load_instance, logistic_problem, save_instance)
from .regularizers import (GroupL12, L1, ManifoldDescriptor, NDReport,
                           Nuclear, Regularizer, descriptors_equal,
                           make_regularizer)
from .solvers import (GradientTable, SolverConfig, SolverTrace, fb_step, run,
                      run_fbs, run_prox_sgd, run_prox_svrg, run_saga)
from .local_analysis import (LocalCertificate, RateBundle, build_mfb, certify,
                             linearization_residual, rate_formulas,
                             restricted_alpha, spectral_radius,
                             theoretical_rates)
from .acceleration import (CGState, HybridPolicy, IdentificationDetector,
                           detect, local_lipschitz, newton_on_manifold,
                           riemannian_cg_step, riemannian_gradient, run_hybrid)
from .harness import (closed_form_unitary_lasso, empirical_contraction_factor,
                      fixed_point_residual, reference_solution, resolve_gamma,
                      summarize_rates)

__version__ = "0.1.0"
