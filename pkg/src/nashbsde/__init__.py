"""Nash equilibrium computation and certification for two-player
Markovian stochastic differential games via coupled backward SDEs.

Workflow: define a game (or pick a built-in), simulate a driftless
reference ensemble, solve the coupled backward system by least-squares
Monte Carlo, then certify the candidate equilibrium by reweighted payoff
evaluation and a unilateral-deviation sweep.
"""

from .games import (Box, FeedbackControl, GameSpec, GbmGameParams, LqGameParams,
                    best_response_grid, builtin_game, check_isaacs, clamp_01,
                    clamp_pm1, equilibrium_feedbacks, eval_hamiltonian,
                    gbm_extension_game, lq_feedback, lq_game, validate_game)
from .sde import (PathBundle, SimulationError, TimeGrid, girsanov_weight,
                  path_increments, simulate_controlled, simulate_reference)
from .smoothing import (MollifyParams, cutoff, mollified_generator,
                        truncate_state, verify_generator_properties)
from .solver import (BsdeSolution, RegressionBasis, RegressionError,
                     growth_diagnostic, growth_stability, solve_coupled)
from .payoffs import (DeviationFamily, NashReport, PayoffEstimate,
                      deviation_test, estimate_payoff, make_deviation_family,
                      standard_deviation_family, verify_w0_equals_j)
from .density import (AronsonParams, check_aronson, domination_check,
                      gaussian_density, lognormal_density,
                      lognormal_density_corrected, lognormal_mass_report)

__version__ = "0.1.0"
