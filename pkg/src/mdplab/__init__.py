"""Instance-dependent regret lower bounds for average-reward MDPs."""

from .confusing import (
    ConfusingCertificate,
    NoCertificate,
    build_confusing,
    is_alternative,
    is_confusing,
    local_modification,
    switch_holds,
    unlikelihood,
)
from .core import (
    OptimalSolution,
    diameter,
    first_passage,
    is_communicating,
    policy_eval,
    solve_optimal,
    validate,
)
from .divergence import info_value, kl_bernoulli, kl_kernel, kl_pair, kl_reward
from .errors import ConvergenceError, InputError, MdpLabError, ModelError, PreconditionError
from .hardness import KnapsackInstance, build_widget_family, decide_confusing_model, decide_regret, kp_oracle
from .lowerbound import (
    LowerBoundReport,
    bandit_closed_form,
    lower_bound_general,
    no_navigation_bound,
    recurrent_closed_form,
    switching_bandit_bound,
)
from .model import Mdp, Policy, RewardDist, load_model
from .simulator import (
    forced_explore,
    loglik_check,
    navigation_distance,
    policy_agent,
    pseudo_regret_check,
    quasi_flow_residual,
    simulate,
    simulate_batch,
    uniform_random,
)
from .structure import contract, invariant_system, is_closed, represent_contracted

__version__ = "0.1.0"
