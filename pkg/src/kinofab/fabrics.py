"""Fabric components: task-map evaluations, the acceleration policy and
finite-difference checks for potential gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

STRICT = "strict"
GATED = "gated"
SPEED_GATES = (STRICT, GATED)
DEFAULT_GATE_EPS = 1.0
DEFAULT_DAMPING = 10.0


@dataclass
class TaskMapEval:
    """Task coordinates of one behavior.

    ``J`` is the raw task Jacobian ``dx/dq``; ``dx`` is filled in once the
    prioritized Jacobian is known. ``x_rate`` is the explicit time
    derivative of ``x`` at fixed ``q`` (a moving obstacle), zero otherwise.
    ``flagged`` marks a clamped barrier (collision or limit violation).
    """

    x: np.ndarray
    J: np.ndarray
    dx: np.ndarray | None = None
    x_rate: np.ndarray | float = 0.0
    flagged: bool = False

    @property
    def dim(self) -> int:
        return self.x.size


@dataclass
class FabricEval:
    """Evaluated metric, policy and prioritized Jacobians of one behavior."""

    M: np.ndarray
    pi: np.ndarray
    J_star: np.ndarray
    J_star_dot: np.ndarray

    def __post_init__(self):
        m = self.pi.size
        if self.M.shape != (m, m):
            raise ValueError(f"metric shape {self.M.shape} does not match policy dim {m}")
        if self.J_star.shape[0] != m or self.J_star_dot.shape != self.J_star.shape:
            raise ValueError("prioritized Jacobian dims inconsistent with policy")


def policy(grad_psi, dx, B: float = DEFAULT_DAMPING, speed_gate: str = GATED,
           gate_eps: float = DEFAULT_GATE_EPS, elementwise: bool = False) -> np.ndarray:
    """Degree-2 acceleration policy ``-|dx|^2 grad_psi - B dx``.

    In ``"gated"`` mode the speed factor is ``max(|dx|^2, gate_eps)`` so a
    behavior can start motion from rest; ``"strict"`` keeps the pure form.
    With ``elementwise=True`` each coordinate is treated as an independent
    scalar task and uses its own speed factor.
    """
    if B < 0:
        raise ValueError(f"damping must be non-negative, got {B}")
    if speed_gate not in SPEED_GATES:
        raise ValueError(f"unknown speed gate {speed_gate!r}")
    grad_psi = np.asarray(grad_psi, dtype=float)
    dx = np.asarray(dx, dtype=float)
    if grad_psi.shape != dx.shape:
        raise ValueError("grad_psi and dx must have the same shape")
    speed = dx * dx if elementwise else float(dx @ dx)
    if speed_gate == GATED:
        speed = np.maximum(speed, gate_eps)
    return -speed * grad_psi - B * dx


def check_gradient(psi: Callable, grad: Callable, x, h: float = 1e-6) -> float:
    """Max relative error of ``grad(x)`` against central differences of ``psi``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = np.atleast_1d(np.asarray(grad(x), dtype=float))
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (float(psi(x + e)) - float(psi(x - e))) / (2 * h)
    scale = max(np.max(np.abs(fd)), np.max(np.abs(g)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(g - fd)) / scale)
