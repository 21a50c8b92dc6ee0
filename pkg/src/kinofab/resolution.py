"""Pullback-and-sum resolution of behavior fabrics into joint accelerations,
and the single control-loop step built on it."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .behaviors import BehaviorTree, World, metric, potential_gradient, task_jacobian, task_map, tree_tick
from .fabrics import DEFAULT_GATE_EPS, GATED, FabricEval, policy
from .model import ChainModel, GeneralizedState, KinematicsCache, inverse_dynamics, mass_matrix
from .prioritization import DEFAULT_DELTA, PrioritizedStack, prioritized_jacobians


class ResolutionError(ValueError):
    pass


@dataclass
class ControlOptions:
    speed_gate: str = GATED
    gate_eps: float = DEFAULT_GATE_EPS
    delta: float = DEFAULT_DELTA
    fd_step: float = 1e-6
    pinv_rtol: float | None = None


@dataclass
class ResolutionResult:
    ddq: np.ndarray
    metric_rank: int
    diagnostics: list = field(default_factory=list)
    wall_us: float = 0.0


def _pinv_with_rank(A, rtol):
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ResolutionError("matrix has non-finite entries")
    n = A.shape[0]
    if rtol is None:
        rtol = n * np.finfo(float).eps
    if n == 0:
        return np.zeros_like(A), 0
    # For symmetric A the singular values are |eigenvalues|.
    w, V = np.linalg.eigh(A)
    s = np.abs(w)
    s_max = s.max()
    if s_max == 0.0:
        return np.zeros_like(A), 0
    keep = s > rtol * s_max
    Vk = V[:, keep]
    return (Vk / w[keep]) @ Vk.T, int(np.count_nonzero(keep))


def moore_penrose_pinv(A, rtol: float | None = None) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix by spectral truncation.

    Singular values (absolute eigenvalues) below ``rtol * s_max`` are
    dropped; the default ``rtol`` is ``n * eps``.
    """
    return _pinv_with_rank(A, rtol)[0]


def resolve(evals: Sequence[FabricEval], dq, rtol: float | None = None,
            with_rank: bool = True) -> ResolutionResult:
    """``ddq = (sum J*^T M J*)^+ sum J*^T M (pi - Jdot* dq)``.

    Behaviors whose metric is identically zero are skipped. The sums are
    formed as one stacked product ``J^T blockdiag(M) J``.
    """
    if not len(evals):
        raise ResolutionError("nothing to resolve: empty behavior list")
    dq = np.asarray(dq, dtype=float)
    n = dq.size
    for ev in evals:
        if ev.J_star.shape[1] != n:
            raise ResolutionError(f"Jacobian has {ev.J_star.shape[1]} columns, expected {n}")
        # one reduction per term; any nan/inf makes the total non-finite
        if not math.isfinite(ev.M.sum() + ev.pi.sum() + ev.J_star.sum() + ev.J_star_dot.sum()):
            raise ResolutionError("non-finite values in a behavior evaluation")
    live = [ev for ev in evals if ev.M.any()]
    if not live:
        return ResolutionResult(ddq=np.zeros(n), metric_rank=0)
    J = np.vstack([ev.J_star for ev in live])
    rhs = np.concatenate([ev.pi - ev.J_star_dot @ dq for ev in live])
    M = np.zeros((J.shape[0], J.shape[0]))
    i = 0
    for ev in live:
        m = ev.pi.size
        M[i:i + m, i:i + m] = ev.M
        i += m
    JtM = J.T @ M
    A_pinv, rank = _pinv_with_rank(JtM @ J, rtol)
    ddq = A_pinv @ (JtM @ rhs)
    if not np.all(np.isfinite(ddq)):
        raise ResolutionError("resolved acceleration is not finite")
    return ResolutionResult(ddq=ddq, metric_rank=rank if with_rank else -1)


def _raw_jacobians(model, specs, q, which=None):
    if which is not None and not any(which):
        return [None] * len(specs)
    kin = KinematicsCache(model, q)
    return [task_jacobian(s, model, q, kin) if which is None or which[k] else None
            for k, s in enumerate(specs)]


def evaluate_fabrics(model: ChainModel, state: GeneralizedState, specs: Sequence,
                     options: ControlOptions | None = None):
    """Evaluate every behavior in ``specs`` at ``state``.

    Returns ``(evals, tasks, D)`` where ``evals`` are the fabric terms fed to
    :func:`resolve`. ``Jdot*`` comes from a symmetric directional difference
    of the whole prioritization pipeline along ``dq``. ``D`` is ``None``
    when every behavior shares one priority level (no projection needed).
    """
    opt = options or ControlOptions()
    q, dq = state.q, state.dq
    n = model.n_joints
    kin = KinematicsCache(model, q)
    tasks = [task_map(s, model, q, kin) for s in specs]
    stack = PrioritizedStack([s.priority for s in specs], [s.selection_matrix(n) for s in specs])
    D = None if stack.single_level else mass_matrix(model, q)
    J_star = prioritized_jacobians(stack, [t.J for t in tasks], D, opt.delta)

    h = opt.fd_step
    if not dq.any():
        J_dot = [np.zeros_like(J) for J in J_star]
    elif stack.single_level:
        J_dot = []
        varying = [not s.constant_jacobian for s in specs]
        Jp = _raw_jacobians(model, specs, q + h * dq, varying)
        Jm = _raw_jacobians(model, specs, q - h * dq, varying)
        for k, J in enumerate(J_star):
            if not varying[k]:
                J_dot.append(np.zeros_like(J))
                continue
            Jd = (Jp[k] - Jm[k]) / (2 * h)
            S = stack.selections[k]
            J_dot.append(Jd if S is None else Jd @ S)
    else:
        qp, qm = q + h * dq, q - h * dq
        Jsp = prioritized_jacobians(stack, _raw_jacobians(model, specs, qp), mass_matrix(model, qp), opt.delta)
        Jsm = prioritized_jacobians(stack, _raw_jacobians(model, specs, qm), mass_matrix(model, qm), opt.delta)
        J_dot = [(a - b) / (2 * h) for a, b in zip(Jsp, Jsm)]

    evals = []
    for spec, task, Js, Jd in zip(specs, tasks, J_star, J_dot):
        task.dx = Js @ dq + task.x_rate
        M = metric(spec, task.x, task.dx)
        grad = potential_gradient(spec, task.x)
        pi = policy(grad, task.dx, spec.damping, opt.speed_gate, opt.gate_eps, elementwise=spec.is_limit)
        evals.append(FabricEval(M=M, pi=pi, J_star=Js, J_star_dot=Jd))
    return evals, tasks, D


def control_step(model: ChainModel, state: GeneralizedState, tree, world: World | None = None,
                 t: float = 0.0, options: ControlOptions | None = None, diagnostics: bool = True):
    """One control-loop iteration.

    Runs the tree tick, evaluates the active behaviors, resolves them and
    maps the result through inverse dynamics. Returns ``(result, tau)``;
    ``result.wall_us`` times everything after the tree tick.
    """
    if not isinstance(tree, BehaviorTree):
        tree = BehaviorTree(tree)
    world = world if world is not None else World()
    world.model, world.q = model, state.q
    active = tree_tick(tree, world, t)

    start = time.perf_counter_ns()
    opt = options or ControlOptions()
    if active:
        evals, tasks, _ = evaluate_fabrics(model, state, active, opt)
        result = resolve(evals, state.dq, opt.pinv_rtol, with_rank=diagnostics)
    else:
        evals, tasks = [], []
        result = ResolutionResult(ddq=np.zeros(model.n_joints), metric_rank=0)
    tau = inverse_dynamics(model, state.q, state.dq, result.ddq)
    result.wall_us = (time.perf_counter_ns() - start) / 1e3

    if diagnostics:
        result.diagnostics = [
            {"name": s.name, "x": tk.x, "dx": tk.dx, "pi": ev.pi,
             "metric_norm": float(np.linalg.norm(ev.M)), "flagged": tk.flagged}
            for s, tk, ev in zip(active, tasks, evals)
        ]
    return result, tau
