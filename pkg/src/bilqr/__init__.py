"""Bilinear Koopman identification and inverse optimal control.

Estimate unknown nonlinear dynamics as an exactly-equivalent lifted bilinear
system from trajectory data, recover the quadratic state-cost matrix that
makes the observed trajectories optimal, and re-solve the forward problem
for prediction.
"""

from .data import TrajectoryBatch, load_batch, save_batch
from .edmdc import (BilinearModel, LinearModel, fit_bilinear,
                    fit_bilinear_lifted, fit_decoder, fit_linear,
                    fit_linear_lifted, load_model, pinv, save_model)
from .errors import (BilqrError, DegenerateDataError, DimensionMismatchError,
                     DivergenceError, GenerationError, InvalidInputError,
                     LineSearchStalledError)
from .ioc import (CostEstimate, IocDiagnostics, build_O_AB, build_O_B,
                  build_script_A, build_script_A_i, build_script_A_linear,
                  costate_backward, detect_unactuated, duplication_matrix,
                  estimate_cost, load_cost, save_cost, solve_Q, unvech, vech)
from .lifting import (Dictionary, LiftedBatch, Term, lift, lift_batch,
                      lift_jacobian, monomial_dictionary)
from .optctrl import (OcProblem, OcSolution, QuadraticLiftedCost,
                      generate_batch, objective_and_gradient, predict,
                      riccati_lqr, rollout, solve)
from .systems import AnalyticSystem, analytic_lift_check, make_system

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
