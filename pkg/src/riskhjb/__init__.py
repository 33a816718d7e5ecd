"""Risk-minimizing stochastic optimal control via the linearized HJB equation."""

from .model import (CostSpec, FunctionSafeSet, Problem, RectAnnulus, SdeModel, phi, phi_tilde,
                    verify_lambda)
from .policy import PolicyTable, policy_from_value
from .simulate import (TrajectoryBatch, estimate_cost, euler_maruyama_rollout,
                       exit_time_of_path, mc_failure_probability)

__version__ = "0.1.0"

__all__ = [
    "CostSpec", "FunctionSafeSet", "Problem", "RectAnnulus", "SdeModel", "phi", "phi_tilde",
    "verify_lambda", "PolicyTable", "policy_from_value", "TrajectoryBatch", "estimate_cost",
    "euler_maruyama_rollout", "exit_time_of_path", "mc_failure_probability",
]
