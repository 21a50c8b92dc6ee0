"""Primitive motion behaviors (attractor, repeller, joint limits) and the
behavior tree that sets their targets and activation each tick."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .fabrics import DEFAULT_DAMPING, TaskMapEval
from .model import ChainModel, GeneralizedState, KinematicsCache, forward_kinematics, point_kinematics

ATTRACTOR = "attractor"
REPELLER = "repeller"
LIMIT_UPPER = "limit-upper"
LIMIT_LOWER = "limit-lower"
KINDS = (ATTRACTOR, REPELLER, LIMIT_UPPER, LIMIT_LOWER)

JOINTS = "joints"

DEFAULT_GAINS = {
    ATTRACTOR: {"lambda_e": 10.0},
    REPELLER: {"lambda_b": 1.0, "lambda_om": 1.0, "d_max": 1.0},
    LIMIT_UPPER: {"lambda_l": 0.25, "lambda_lm": 0.25},
    LIMIT_LOWER: {"lambda_l": 0.25, "lambda_lm": 0.25},
}
DEFAULT_WEIGHTS = {ATTRACTOR: 1.0, REPELLER: 5.0, LIMIT_UPPER: 5.0, LIMIT_LOWER: 5.0}
DEFAULT_PRIORITY = 2

REPELLER_CLAMP = 1e-6
LIMIT_CLAMP = 1e-4


class BehaviorError(ValueError):
    pass


@dataclass
class BehaviorSpec:
    """One primitive behavior.

    ``attachment`` is a control-point name, ``"joints"`` for every joint, or
    a list of joint indices. Limit behaviors read their bounds from the
    model unless ``target`` overrides them for the attached joints.
    """

    name: str
    kind: str
    priority: int = DEFAULT_PRIORITY
    weight: float | None = None
    damping: float = DEFAULT_DAMPING
    gains: dict = field(default_factory=dict)
    target: Any = None
    target_velocity: Any = None
    attachment: Any = JOINTS
    selection: Sequence[int] | None = None
    active: bool = True
    tag: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BehaviorError(f"{self.name}: unknown behavior class {self.kind!r}")
        if int(self.priority) != self.priority or self.priority < 1:
            raise BehaviorError(f"{self.name}: priority must be an integer >= 1")
        self.priority = int(self.priority)
        if self.weight is None:
            self.weight = DEFAULT_WEIGHTS[self.kind]
        if not self.weight > 0:
            raise BehaviorError(f"{self.name}: weight must be > 0")
        if not self.damping >= 0:
            raise BehaviorError(f"{self.name}: damping must be >= 0")
        allowed = DEFAULT_GAINS[self.kind]
        extra = set(self.gains) - set(allowed)
        if extra:
            raise BehaviorError(f"{self.name}: gains {sorted(extra)} do not apply to {self.kind}")
        self.gains = {**allowed, **{k: float(v) for k, v in self.gains.items()}}
        for k, v in self.gains.items():
            if not v > 0:
                raise BehaviorError(f"{self.name}: {k} must be > 0")
        if self.kind == REPELLER and (not isinstance(self.attachment, str) or self.attachment == JOINTS):
            raise BehaviorError(f"{self.name}: repeller must attach to a control point")
        if self.kind in (LIMIT_UPPER, LIMIT_LOWER) and isinstance(self.attachment, str) \
                and self.attachment != JOINTS:
            raise BehaviorError(f"{self.name}: limit behaviors attach to joints")
        if self.target is not None:
            self.target = np.asarray(self.target, dtype=float).ravel()
        if self.target_velocity is not None:
            self.target_velocity = np.asarray(self.target_velocity, dtype=float).ravel()

    @property
    def is_limit(self) -> bool:
        return self.kind in (LIMIT_UPPER, LIMIT_LOWER)

    @property
    def on_joints(self) -> bool:
        return not isinstance(self.attachment, str) or self.attachment == JOINTS

    @property
    def constant_jacobian(self) -> bool:
        """Task Jacobian independent of ``q`` (joint-space maps)."""
        return self.kind != REPELLER and self.on_joints

    def joint_indices(self, n: int) -> np.ndarray:
        if isinstance(self.attachment, str):
            return np.arange(n)
        idx = np.asarray(self.attachment, dtype=int).ravel()
        if idx.size == 0 or idx.min() < 0 or idx.max() >= n:
            raise BehaviorError(f"{self.name}: joint indices out of range")
        return idx

    def selection_matrix(self, n: int) -> np.ndarray | None:
        """Diagonal selection ``S_k``; ``None`` stands for the identity."""
        if self.selection is None:
            return None
        S = np.zeros((n, n))
        idx = np.asarray(self.selection, dtype=int)
        S[idx, idx] = 1.0
        return S


# -- potentials ------------------------------------------------------------

def attractor_potential(x, lambda_e):
    x = np.asarray(x, dtype=float)
    return 0.5 * lambda_e * float(x @ x)


def attractor_gradient(x, lambda_e):
    return lambda_e * np.asarray(x, dtype=float)


def repeller_potential(x, lambda_b, d_max):
    """Scalar barrier on squared distance, zero beyond ``d_max``."""
    x = float(np.asarray(x).ravel()[0])
    if x >= d_max:
        return 0.0
    x = max(x, REPELLER_CLAMP)
    return 0.5 * lambda_b * (d_max - x) / (d_max * x) ** 2


def repeller_gradient(x, lambda_b, d_max):
    x = float(np.asarray(x).ravel()[0])
    if x >= d_max:
        return np.zeros(1)
    x = max(x, REPELLER_CLAMP)
    return np.array([0.5 * lambda_b * (x - 2.0 * d_max) / (d_max**2 * x**3)])


def limit_potential(x, lambda_l):
    """Sum of per-coordinate barriers ``lambda_l / x_i^2``."""
    x = np.maximum(np.atleast_1d(np.asarray(x, dtype=float)), LIMIT_CLAMP)
    return float(np.sum(lambda_l / x**2))


def limit_gradient(x, lambda_l):
    x = np.maximum(np.atleast_1d(np.asarray(x, dtype=float)), LIMIT_CLAMP)
    return -2.0 * lambda_l / x**3


def switch(dx):
    """1 where the task coordinate is decreasing, else 0."""
    return (np.asarray(dx, dtype=float) < 0).astype(float)


def potential(spec: BehaviorSpec, x) -> float:
    g = spec.gains
    if spec.kind == ATTRACTOR:
        return attractor_potential(x, g["lambda_e"])
    if spec.kind == REPELLER:
        return repeller_potential(x, g["lambda_b"], g["d_max"])
    return limit_potential(x, g["lambda_l"])


def potential_gradient(spec: BehaviorSpec, x) -> np.ndarray:
    g = spec.gains
    if spec.kind == ATTRACTOR:
        return attractor_gradient(x, g["lambda_e"])
    if spec.kind == REPELLER:
        return repeller_gradient(x, g["lambda_b"], g["d_max"])
    return limit_gradient(x, g["lambda_l"])


def metric(spec: BehaviorSpec, x, dx) -> np.ndarray:
    """Priority metric at ``(x, dx)``; exactly zero when switched off."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if spec.kind == ATTRACTOR:
        return spec.weight * np.eye(x.size)
    if spec.kind == REPELLER:
        if not float(np.asarray(dx).ravel()[0]) < 0:
            return np.zeros((1, 1))
        xx = max(float(x[0]), REPELLER_CLAMP) ** 2
        return np.array([[spec.weight * spec.gains["lambda_om"] / xx]])
    xc = np.maximum(x, LIMIT_CLAMP)
    return np.diag(spec.weight * switch(dx) * spec.gains["lambda_lm"] / xc**2)


# -- task maps ---------------------------------------------------------------

def task_map(spec: BehaviorSpec, model: ChainModel, q, kin: KinematicsCache | None = None) -> TaskMapEval:
    """Task coordinates ``x`` and raw Jacobian ``dx/dq`` at ``q``.

    ``kin`` optionally shares point kinematics across behaviors.
    """
    q = np.asarray(q, dtype=float)
    n = model.n_joints
    if spec.kind == ATTRACTOR:
        if spec.on_joints:
            idx = spec.joint_indices(n)
            sigma = q[idx]
            J = np.zeros((idx.size, n))
            J[np.arange(idx.size), idx] = -1.0
        else:
            sigma, Jp = point_kinematics(model, q, spec.attachment, kin)
            J = -Jp
        goal = sigma if spec.target is None else spec.target
        if goal.shape != sigma.shape:
            raise BehaviorError(f"{spec.name}: target has dim {goal.size}, task space has {sigma.size}")
        return TaskMapEval(x=goal - sigma, J=J)

    if spec.kind == REPELLER:
        sigma, Jp = point_kinematics(model, q, spec.attachment, kin)
        if spec.target is None:
            raise BehaviorError(f"{spec.name}: repeller has no obstacle position")
        d = spec.target - sigma
        x = float(d @ d)
        rate = 0.0 if spec.target_velocity is None else 2.0 * float(d @ spec.target_velocity)
        return TaskMapEval(
            x=np.array([max(x, REPELLER_CLAMP)]),
            J=(-2.0 * d @ Jp).reshape(1, n),
            x_rate=np.array([rate]),
            flagged=x < REPELLER_CLAMP,
        )

    idx = spec.joint_indices(n)
    if spec.kind == LIMIT_UPPER:
        bound = model.joint_upper[idx] if spec.target is None else spec.target
        x = bound - q[idx]
        sign = -1.0
    else:
        bound = model.joint_lower[idx] if spec.target is None else spec.target
        x = q[idx] - bound
        sign = 1.0
    J = np.zeros((idx.size, n))
    J[np.arange(idx.size), idx] = sign
    return TaskMapEval(x=np.maximum(x, LIMIT_CLAMP), J=J, flagged=bool(np.any(x <= 0)))


def task_jacobian(spec: BehaviorSpec, model: ChainModel, q, kin: KinematicsCache | None = None) -> np.ndarray:
    """Raw task Jacobian alone; same value as ``task_map(...).J``."""
    if spec.kind == REPELLER:
        if spec.target is None:
            raise BehaviorError(f"{spec.name}: repeller has no obstacle position")
        sigma, Jp = point_kinematics(model, q, spec.attachment, kin)
        return (-2.0 * (spec.target - sigma) @ Jp).reshape(1, -1)
    if spec.kind == ATTRACTOR and not spec.on_joints:
        return -point_kinematics(model, q, spec.attachment, kin)[1]
    return task_map(spec, model, q, kin).J


def _evaluate(spec, model, state, J_star):
    task = task_map(spec, model, state.q)
    J = task.J if J_star is None else J_star
    task.dx = J @ state.dq + task.x_rate
    return task, metric(spec, task.x, task.dx), potential_gradient(spec, task.x)


def attractor_eval(spec: BehaviorSpec, model: ChainModel, state: GeneralizedState, J_star=None):
    """``(TaskMapEval, M, grad_psi)`` for an attractor."""
    if spec.kind != ATTRACTOR:
        raise BehaviorError(f"{spec.name} is not an attractor")
    return _evaluate(spec, model, state, J_star)


def repeller_eval(spec: BehaviorSpec, model: ChainModel, state: GeneralizedState,
                  obstacle_pos=None, obstacle_vel=None, J_star=None):
    """``(TaskMapEval, M, grad_psi)`` for a repeller; an explicit obstacle
    position/velocity overrides the behavior's current target."""
    if spec.kind != REPELLER:
        raise BehaviorError(f"{spec.name} is not a repeller")
    if obstacle_pos is not None:
        pos = np.asarray(obstacle_pos, dtype=float)
        if not np.all(np.isfinite(pos)):
            raise BehaviorError(f"{spec.name}: obstacle position must be finite")
        spec.target = pos
    if obstacle_vel is not None:
        spec.target_velocity = np.asarray(obstacle_vel, dtype=float)
    return _evaluate(spec, model, state, J_star)


def limit_eval(spec: BehaviorSpec, model: ChainModel, state: GeneralizedState, joint=None, J_star=None):
    """``(TaskMapEval, M, grad_psi)`` for a joint-limit behavior.

    With ``joint`` given, only that joint's scalar task is evaluated.
    """
    if not spec.is_limit:
        raise BehaviorError(f"{spec.name} is not a limit behavior")
    if joint is not None:
        single = BehaviorSpec(
            name=spec.name, kind=spec.kind, priority=spec.priority, weight=spec.weight,
            damping=spec.damping, gains=dict(spec.gains), attachment=[int(joint)],
        )
        if spec.target is not None:
            pos = list(spec.joint_indices(model.n_joints)).index(int(joint))
            single.target = spec.target[pos:pos + 1]
        spec = single
    return _evaluate(spec, model, state, J_star)


def evaluate(spec: BehaviorSpec, model: ChainModel, state: GeneralizedState, J_star=None):
    return _evaluate(spec, model, state, J_star)


# -- behavior tree -----------------------------------------------------------

NODE_KINDS = ("dodge", "track", "schedule")


@dataclass
class World:
    """What high-level behaviors observe: obstacles, named goals, robot."""

    obstacles: list = field(default_factory=list)
    goals: Mapping[str, Any] = field(default_factory=dict)
    model: ChainModel | None = None
    q: np.ndarray | None = None


@dataclass
class TreeNode:
    """High-level behavior.

    ``dodge`` activates its children while obstacle ``obstacle`` is within
    ``activation_radius`` of any child's control point and feeds them the
    obstacle state. ``track`` copies ``world.goals[goal]`` (a vector or a
    callable of time) into its children. ``schedule`` is active on
    ``[start, stop)``.
    """

    name: str
    kind: str
    children: list
    activation_radius: float = np.inf
    obstacle: int = 0
    goal: str | None = None
    start: float = 0.0
    stop: float = np.inf

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise BehaviorError(f"tree node {self.name}: unknown kind {self.kind!r}")
        if not self.activation_radius > 0:
            raise BehaviorError(f"tree node {self.name}: activation_radius must be > 0")
        self.children = list(self.children)


class BehaviorTree:
    """Registry of primitive behaviors plus the high-level nodes above them."""

    def __init__(self, behaviors: Sequence[BehaviorSpec], nodes: Sequence[TreeNode] = ()):
        self.behaviors = list(behaviors)
        self.nodes = list(nodes)
        self._by_name = {}
        for b in self.behaviors:
            if b.name in self._by_name:
                raise BehaviorError(f"duplicate behavior name {b.name!r}")
            self._by_name[b.name] = b
        self._nodes = {}
        for nd in self.nodes:
            if nd.name in self._nodes or nd.name in self._by_name:
                raise BehaviorError(f"duplicate tree node name {nd.name!r}")
            self._nodes[nd.name] = nd
        for nd in self.nodes:
            for c in nd.children:
                if c not in self._nodes and c not in self._by_name:
                    raise BehaviorError(f"tree node {nd.name}: dangling edge to {c!r}")
        self._order = self._topological_order()
        child_nodes = {c for nd in self.nodes for c in nd.children if c in self._nodes}
        self.roots = [nd.name for nd in self.nodes if nd.name not in child_nodes]
        self.controlled = {c for nd in self.nodes for c in nd.children if c in self._by_name}

    def _topological_order(self):
        order, state = [], {}

        def visit(name):
            if state.get(name) == 1:
                raise BehaviorError(f"behavior tree has a cycle through {name!r}")
            if state.get(name) == 2:
                return
            state[name] = 1
            for c in self._nodes[name].children:
                if c in self._nodes:
                    visit(c)
            state[name] = 2
            order.append(name)

        for nd in self.nodes:
            visit(nd.name)
        return order[::-1]

    def behavior(self, name: str) -> BehaviorSpec:
        return self._by_name[name]

    def __iter__(self):
        return iter(self.behaviors)

    def __len__(self):
        return len(self.behaviors)


def _child_points(tree, node):
    return [tree.behavior(c).attachment for c in node.children
            if c in tree._by_name and isinstance(tree.behavior(c).attachment, str)
            and tree.behavior(c).attachment != JOINTS]


def _node_predicate(tree, node, world, t):
    if node.kind == "schedule":
        return node.start <= t < node.stop
    if node.kind == "track":
        return node.goal is not None and node.goal in world.goals
    if node.obstacle >= len(world.obstacles):
        return False
    if not np.isfinite(node.activation_radius) or world.model is None or world.q is None:
        return True
    obs = np.asarray(world.obstacles[node.obstacle].position, dtype=float)
    for point in _child_points(tree, node):
        if np.linalg.norm(obs - forward_kinematics(world.model, world.q, point)) < node.activation_radius:
            return True
    return False


def tree_tick(tree: BehaviorTree, world: World, t: float) -> list:
    """Refresh activation flags and set-points; return the active behaviors
    in registration order.

    Behaviors not referenced by any node keep their static flag and target.
    """
    node_active = {}
    parent_active = {name: False for name in tree._nodes}
    for name in tree.roots:
        parent_active[name] = True
    for name in tree._order:
        node = tree._nodes[name]
        active = parent_active[name] and _node_predicate(tree, node, world, t)
        node_active[name] = active
        for c in node.children:
            if c in tree._nodes and active:
                parent_active[c] = True

    for b in tree.behaviors:
        if b.name in tree.controlled:
            b.active = False
    for name in tree._order:
        if not node_active[name]:
            continue
        node = tree._nodes[name]
        for c in node.children:
            if c not in tree._by_name:
                continue
            b = tree.behavior(c)
            b.active = True
            if node.kind == "dodge":
                obs = world.obstacles[node.obstacle]
                b.target = np.asarray(obs.position, dtype=float).copy()
                b.target_velocity = np.asarray(obs.velocity, dtype=float).copy()
            elif node.kind == "track":
                goal = world.goals[node.goal]
                goal = goal(t) if callable(goal) else goal
                b.target = np.asarray(goal, dtype=float).ravel().copy()
    return [b for b in tree.behaviors if b.active]
