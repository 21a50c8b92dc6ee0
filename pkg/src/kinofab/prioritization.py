"""Strict behavior hierarchy through dynamically-consistent nullspace
projection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_DELTA = 1e-6


def dyn_consistent_pinv(J, D, delta: float = DEFAULT_DELTA, D_inv=None) -> np.ndarray:
    """Inertia-weighted right inverse ``D^-1 J^T (J D^-1 J^T)^-1``.

    When ``J D^-1 J^T`` has an eigenvalue below ``delta`` it is regularized
    with ``delta * I`` before inversion. ``D_inv`` may be passed to reuse an
    inverse across calls.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    D = np.asarray(D, dtype=float)
    m, n = J.shape
    if D.shape != (n, n):
        raise ValueError(f"J is {m}x{n} but D is {D.shape[0]}x{D.shape[1]}")
    if D_inv is None:
        D_inv = np.linalg.inv(D)
    DJt = D_inv @ J.T
    lam_inv = J @ DJt
    if m and np.linalg.eigvalsh(lam_inv)[0] < delta:
        lam_inv = lam_inv + delta * np.eye(m)
    return DJt @ np.linalg.inv(lam_inv)


def nullspace(J, D, delta: float = DEFAULT_DELTA, D_inv=None) -> np.ndarray:
    """Dynamically-consistent nullspace projector ``I - Jbar J``."""
    J = np.asarray(J, dtype=float)
    n = np.asarray(D).shape[0]
    if J.size == 0:
        return np.eye(n)
    J = np.atleast_2d(J)
    return np.eye(n) - dyn_consistent_pinv(J, D, delta, D_inv) @ J


@dataclass
class PrioritizedStack:
    """Behaviors ordered by ascending priority, registration order within a
    level. ``selections`` holds one diagonal selection matrix per behavior,
    or ``None`` for the identity."""

    priorities: Sequence[int]
    selections: Sequence[np.ndarray | None] | None = None
    order: list = field(init=False)
    levels: list = field(init=False)

    def __post_init__(self):
        self.priorities = [int(p) for p in self.priorities]
        if any(p < 1 for p in self.priorities):
            raise ValueError("priorities must be >= 1")
        if self.selections is None:
            self.selections = [None] * len(self.priorities)
        if len(self.selections) != len(self.priorities):
            raise ValueError("one selection matrix per behavior is required")
        self.order = sorted(range(len(self.priorities)), key=lambda k: (self.priorities[k], k))
        self.levels = sorted(set(self.priorities))

    def __len__(self):
        return len(self.priorities)

    @property
    def single_level(self) -> bool:
        return len(self.levels) <= 1


def nullspace_products(stack: PrioritizedStack, raw: Sequence[np.ndarray], D,
                       delta: float = DEFAULT_DELTA) -> dict:
    """``N_pr(rho)`` for every priority level present in the stack.

    The product runs over all behaviors of strictly higher priority, in
    stack order; the top level maps to the identity.
    """
    if D is None:
        raise ValueError("mass matrix D is required")
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    products = {}
    N = np.eye(n)
    D_inv = None
    pos = 0
    for level in stack.levels:
        products[level] = N
        members = []
        while pos < len(stack.order) and stack.priorities[stack.order[pos]] == level:
            members.append(stack.order[pos])
            pos += 1
        if level == stack.levels[-1]:
            break
        if D_inv is None:
            D_inv = np.linalg.inv(D)
        for k in members:
            N = N @ nullspace(raw[k], D, delta, D_inv)
    return products


def prioritized_jacobians(stack: PrioritizedStack, raw: Sequence[np.ndarray], D,
                          delta: float = DEFAULT_DELTA) -> list:
    """``J*_k = J_k S_k N_pr(rho_k)`` for every behavior, in input order."""
    if len(raw) != len(stack):
        raise ValueError(f"{len(raw)} Jacobians for a stack of {len(stack)}")
    if not len(stack):
        return []
    if stack.single_level:
        return [J if S is None else J @ S for J, S in zip(raw, stack.selections)]
    if D is None:
        raise ValueError("mass matrix D is required")
    products = nullspace_products(stack, raw, D, delta)
    out = []
    for k, J in enumerate(raw):
        S = stack.selections[k]
        Js = J if S is None else J @ S
        N = products[stack.priorities[k]]
        out.append(Js if stack.priorities[k] == stack.levels[0] else Js @ N)
    return out
