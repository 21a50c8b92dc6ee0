"""Scenario rollouts: kinematic double integration of the commanded
accelerations, projectile obstacles, logging and timing."""

from __future__ import annotations

import csv
import gc
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .behaviors import ATTRACTOR, BehaviorSpec, BehaviorTree, TreeNode, World
from .model import ChainModel, GeneralizedState, forward_kinematics
from .resolution import ControlOptions, control_step

DEFAULT_DT = 1e-3
DEFAULT_DIVERGENCE_BOUND = 100.0


class DivergenceError(RuntimeError):
    """Joint velocity exceeded the scenario's divergence bound."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


@dataclass
class Obstacle:
    """Circular projectile.

    With ``launch_speed > 0`` the obstacle rests at ``position`` until
    ``launch_time`` and then flies at ``launch_speed`` along ``direction``
    (or toward control point ``aim_point`` at launch). Otherwise it moves
    with constant ``velocity`` from the start.
    """

    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    radius: float = 0.05
    launch_speed: float = 0.0
    launch_time: float = 0.0
    direction: np.ndarray | None = None
    aim_point: str | None = None
    gravity: bool = False
    launched: bool = False

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).ravel()
        self.velocity = np.asarray(self.velocity, dtype=float).ravel()
        if self.direction is not None:
            self.direction = np.asarray(self.direction, dtype=float).ravel()
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")
        if self.launch_speed < 0:
            raise ValueError("launch speed must be non-negative")
        if self.launch_speed > 0 and self.direction is None and self.aim_point is None:
            raise ValueError("a launched obstacle needs a direction or an aim point")
        if self.launch_speed == 0:
            self.launched = True


def integrate_step(state: GeneralizedState, ddq, dt: float) -> GeneralizedState:
    """Semi-implicit Euler: velocity first, then position with the new velocity."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    ddq = np.asarray(ddq, dtype=float)
    if not np.all(np.isfinite(ddq)):
        raise ValueError("non-finite joint acceleration")
    dq = state.dq + ddq * dt
    return GeneralizedState(state.q + dq * dt, dq)


def obstacle_step(obstacle: Obstacle, dt: float, gravity=(0.0, -9.81)) -> Obstacle:
    """Advance a projectile by ``dt``; gravity applies only if the obstacle
    has ``gravity=True``. Integration is exact for constant acceleration."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not obstacle.launched:
        return replace(obstacle)
    if obstacle.gravity:
        g = np.asarray(gravity, dtype=float)
        return replace(obstacle, position=obstacle.position + obstacle.velocity * dt + 0.5 * g * dt * dt,
                       velocity=obstacle.velocity + g * dt)
    return replace(obstacle, position=obstacle.position + obstacle.velocity * dt)


def launch(obstacle: Obstacle, model: ChainModel, q) -> Obstacle:
    if obstacle.direction is not None:
        d = obstacle.direction
    else:
        d = forward_kinematics(model, q, obstacle.aim_point) - obstacle.position
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ValueError("obstacle launch direction is zero")
    return replace(obstacle, velocity=obstacle.launch_speed * d / norm, launched=True)


@dataclass
class Scenario:
    model: ChainModel
    behaviors: Sequence[BehaviorSpec]
    q0: np.ndarray
    dq0: np.ndarray | None = None
    nodes: Sequence[TreeNode] = ()
    obstacles: Sequence[Obstacle] = ()
    goals: dict = field(default_factory=dict)
    dt: float = DEFAULT_DT
    duration: float = 1.0
    options: ControlOptions = field(default_factory=ControlOptions)
    divergence_bound: float = DEFAULT_DIVERGENCE_BOUND
    monitor_points: Sequence[str] | None = None
    name: str = "scenario"

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float).ravel()
        n = self.model.n_joints
        if self.q0.size != n:
            raise ValueError(f"q0 has {self.q0.size} entries, model has {n} joints")
        self.dq0 = np.zeros(n) if self.dq0 is None else np.asarray(self.dq0, dtype=float).ravel()
        if self.dq0.size != n:
            raise ValueError(f"dq0 has {self.dq0.size} entries, model has {n} joints")
        if not self.dt > 0 or not self.duration > 0:
            raise ValueError("dt and duration must be positive")
        if self.monitor_points is None:
            self.monitor_points = [self.model.end_effector]
        for p in self.monitor_points:
            self.model.control_point(p)

    @property
    def steps(self) -> int:
        return int(math.ceil(round(self.duration / self.dt, 9)))


@dataclass
class ScenarioLog:
    t: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray
    tau: np.ndarray
    ee: np.ndarray
    obs: np.ndarray
    min_dist: np.ndarray
    iter_us: np.ndarray
    viol: np.ndarray
    summary: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    def columns(self) -> list:
        n = self.q.shape[1]
        return (["t"] + [f"q{i}" for i in range(n)] + [f"dq{i}" for i in range(n)]
                + ["ee_x", "ee_y", "obs_x", "obs_y", "min_dist", "iter_us", "viol"])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for k in range(len(self)):
                row = [self.t[k], *self.q[k], *self.dq[k], *self.ee[k], *self.obs[k],
                       self.min_dist[k], self.iter_us[k], self.viol[k]]
                w.writerow([repr(float(v)) for v in row])

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _clearance(model, q, points, obstacles):
    best = np.inf
    for p in points:
        pos = forward_kinematics(model, q, p)
        for ob in obstacles:
            best = min(best, max(0.0, float(np.linalg.norm(pos - ob.position)) - ob.radius))
    return best


def _violation(model, q):
    return float(max(0.0, np.max(q - model.joint_upper), np.max(model.joint_lower - q)))


def _tracking_error(model, behaviors, q):
    errs = []
    for b in behaviors:
        if b.kind != ATTRACTOR or b.target is None:
            continue
        if b.on_joints:
            errs.append(float(np.linalg.norm(b.target - q[b.joint_indices(model.n_joints)])))
        else:
            errs.append(float(np.linalg.norm(b.target - forward_kinematics(model, q, b.attachment))))
    return max(errs) if errs else None


def _rollout(scenario: Scenario, steps: int, collect):
    """Drive the control loop for ``steps`` iterations, calling
    ``collect(k, t, state, result, tau, obstacles)`` before each integration."""
    model = scenario.model
    tree = BehaviorTree([replace(b) for b in scenario.behaviors], list(scenario.nodes))
    obstacles = [replace(o) for o in scenario.obstacles]
    world = World(obstacles=obstacles, goals=dict(scenario.goals))
    state = GeneralizedState(scenario.q0.copy(), scenario.dq0.copy())
    for k in range(steps):
        t = k * scenario.dt
        obstacles = [launch(o, model, state.q) if not o.launched and t >= o.launch_time else o
                     for o in obstacles]
        world.obstacles = obstacles
        result, tau = control_step(model, state, tree, world, t, scenario.options)
        collect(k, t, state, result, tau, obstacles)
        state = integrate_step(state, result.ddq, scenario.dt)
        if np.max(np.abs(state.dq)) > scenario.divergence_bound:
            raise DivergenceError(
                f"joint velocity {np.max(np.abs(state.dq)):.3g} rad/s exceeds bound "
                f"{scenario.divergence_bound:g} at t={t + scenario.dt:.4f}s"
            )
        obstacles = [obstacle_step(o, scenario.dt, model.gravity) for o in obstacles]
    return state, tree


def run_scenario(scenario: Scenario) -> ScenarioLog:
    """Roll the scenario out over its horizon and compute summary metrics."""
    model = scenario.model
    n, N = model.n_joints, scenario.steps
    log = ScenarioLog(
        t=np.zeros(N), q=np.zeros((N, n)), dq=np.zeros((N, n)), ddq=np.zeros((N, n)),
        tau=np.zeros((N, n)), ee=np.zeros((N, 2)), obs=np.full((N, 2), np.nan),
        min_dist=np.full(N, np.inf), iter_us=np.zeros(N), viol=np.zeros(N),
    )
    clamped = [0]

    def collect(k, t, state, result, tau, obstacles):
        log.t[k] = t
        log.q[k], log.dq[k], log.ddq[k], log.tau[k] = state.q, state.dq, result.ddq, tau
        log.ee[k] = forward_kinematics(model, state.q, model.end_effector)
        if obstacles:
            log.obs[k] = obstacles[0].position
            log.min_dist[k] = _clearance(model, state.q, scenario.monitor_points, obstacles)
        log.iter_us[k] = result.wall_us
        log.viol[k] = _violation(model, state.q)
        clamped[0] += any(d["flagged"] for d in result.diagnostics)

    try:
        final, tree = _rollout(scenario, N, collect)
    except DivergenceError as err:
        err.log = log
        raise
    iter_ms = log.iter_us / 1e3
    min_dist = float(np.min(log.min_dist)) if scenario.obstacles else None
    log.summary = {
        "scenario": scenario.name,
        "steps": N,
        "dt": scenario.dt,
        "iter_ms_mean": float(np.mean(iter_ms)),
        "iter_ms_std": float(np.std(iter_ms)),
        "min_distance": min_dist,
        "hit": (min_dist == 0.0) if min_dist is not None else None,
        "max_limit_violation": float(max(np.max(log.viol), _violation(model, final.q))),
        "final_tracking_error": _tracking_error(model, tree.behaviors, final.q),
        "flagged_steps": int(clamped[0]),
    }
    return log


def benchmark(scenario: Scenario, iterations: int = 1000) -> dict:
    """Timing statistics (ms) of the post-tick control step over a rollout.

    The first 10% of iterations are discarded as warm-up. The garbage
    collector is paused during the run, as ``timeit`` does.
    """
    if iterations < 100:
        raise ValueError("benchmark needs at least 100 iterations")
    times = np.zeros(iterations)

    def collect(k, t, state, result, tau, obstacles):
        times[k] = result.wall_us / 1e3

    was_enabled = gc.isenabled()
    gc.disable()
    try:
        _rollout(scenario, iterations, collect)
    finally:
        if was_enabled:
            gc.enable()
    kept = times[iterations // 10:]
    return {
        "mean_ms": float(np.mean(kept)),
        "std_ms": float(np.std(kept)),
        "median_ms": float(np.median(kept)),
        "p99_ms": float(np.percentile(kept, 99)),
        "iterations": int(kept.size),
    }


