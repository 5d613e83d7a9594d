"""Robust ergodic exploration under bounded adversarial disturbance.

Spectral coverage metric, augmented-state trajectory game, receding-horizon
minimax planning, and a physics-informed value-function route to the same
game.  ``robergo.valuenet`` and ``robergo.hji`` are the only modules that
import torch; everything else is plain numpy.
"""

from .ergodic import (
    BasisSet,
    ExplorationSpace,
    InfoDistribution,
    aug_derivative,
    build_basis,
    ergodic_metric_from_aug,
    ergodic_metric_spectral,
    info_coeffs,
    traj_coeffs,
)
from .systems import ControlBounds, FullState, PlantState, euler_step
from .objective import CostBreakdown, CostParams, running_cost, terminal_value
from .controllers import (
    HorizonPlan,
    MPCPolicy,
    RangePolicy,
    ReMPCConfig,
    ReMPCPolicy,
    opt_control_from_costate,
    pred_rollout,
    pred_rollout_grad,
    worst_case_disturbance,
)
from .harness import (
    ExperimentConfig,
    Problem,
    RolloutRecord,
    build_problem,
    compare_experiment,
    make_adversary,
    make_policy,
    rollout,
)

__all__ = [
    "BasisSet",
    "ExplorationSpace",
    "InfoDistribution",
    "aug_derivative",
    "build_basis",
    "ergodic_metric_from_aug",
    "ergodic_metric_spectral",
    "info_coeffs",
    "traj_coeffs",
    "ControlBounds",
    "FullState",
    "PlantState",
    "euler_step",
    "CostBreakdown",
    "CostParams",
    "running_cost",
    "terminal_value",
    "HorizonPlan",
    "MPCPolicy",
    "RangePolicy",
    "ReMPCConfig",
    "ReMPCPolicy",
    "opt_control_from_costate",
    "pred_rollout",
    "pred_rollout_grad",
    "worst_case_disturbance",
    "ExperimentConfig",
    "Problem",
    "RolloutRecord",
    "build_problem",
    "compare_experiment",
    "make_adversary",
    "make_policy",
    "rollout",
]

__version__ = "0.1.0"
