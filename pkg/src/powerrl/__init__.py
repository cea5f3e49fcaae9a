"""Policy optimization with periodic restart (POWER / POWER++) for tabular episodic MDPs."""
from .algorithms import (Hyperparams, RunTrace, Variant, clamp, evaluate_policy_optimistic, exp_weights_update,
                         run_algorithm, theory_hyperparams_power, theory_hyperparams_powerpp)
from .mdp import (TabularMDP, dp_optimal, evaluate_policy_exact, policy_kernel_distance, sample_transition,
                  validate_mdp, visitation_profile)
from .schedules import (compute_DT, compute_PT, make_random_mdp, schedule_adaptive, schedule_drift,
                        schedule_piecewise)

__version__ = "0.1.0"
