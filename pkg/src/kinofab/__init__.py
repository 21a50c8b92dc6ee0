"""Kinodynamic fabrics for fully-actuated planar chains."""

from .behaviors import (
    ATTRACTOR, LIMIT_LOWER, LIMIT_UPPER, REPELLER, BehaviorSpec, BehaviorTree, TreeNode, World,
    attractor_eval, limit_eval, repeller_eval, tree_tick,
)
from .estimator import KinodynamicFabric
from .fabrics import FabricEval, TaskMapEval, check_gradient, policy
from .model import (
    ChainModel, GeneralizedState, coriolis_matrix, forward_dynamics, forward_kinematics,
    gravity_vector, inverse_dynamics, jacobian_dot, mass_matrix, point_jacobian,
)
from .prioritization import PrioritizedStack, dyn_consistent_pinv, nullspace, prioritized_jacobians
from .resolution import ControlOptions, ResolutionResult, control_step, moore_penrose_pinv, resolve
from .sim import Obstacle, Scenario, ScenarioLog, benchmark, integrate_step, obstacle_step, run_scenario

__version__ = "0.1.0"
