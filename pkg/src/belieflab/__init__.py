"""Distributed non-Bayesian learning: simulation and concentration-bound checks."""

from .errors import (AbsoluteContinuityError, AssumptionViolation, BeliefLabError,
                     ConfigError, DegenerateLikelihoodError, OracleFailure)
from .hypothesis import (Covering, HypothesisSpace, LikelihoodModel, alpha_lower_bound,
                         build_hellinger_covering, build_kl_covering, check_assumption3,
                         gamma, gamma_all, hellinger_joint, hellinger_single, kl_ball,
                         kl_divergence, max_delta_separated)
from .network import (Graph, WeightMatrix, consensus_deviation_sum, lazy_metropolis,
                      lemma1_check, make_graph, matrix_power_rows, validate_weights)
from .beliefs import (BeliefState, belief_mass, closed_form, consensus_gap,
                      mirror_oracle_step, step, uniform_state)
from .bounds import (BoundReport, ConcentrationParams, constant_C2, constant_C3,
                     lemma2_mc, lemma3_check, lemma4_mc, theorem1_N, theorem2_N, vbar)
from .scenario import (Scenario, Trace, build_localization, concentration_time,
                       make_scenario, mc_concentration, rate_slope, run)

__version__ = "0.1.0"
