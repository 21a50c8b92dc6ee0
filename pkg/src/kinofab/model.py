"""Planar serial-chain kinematics and point-mass rigid-body dynamics.

Joint angles are relative: link ``i`` points along the cumulative angle
``q[0] + ... + q[i]``. Each link carries a point mass at its tip. All
functions are pure and allocate their outputs.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

DEFAULT_GRAVITY = (0.0, -9.81)


@dataclass(frozen=True)
class ControlPoint:
    """A point rigidly attached to ``link`` at ``offset`` metres from its base."""

    link: int
    offset: float


@dataclass
class ChainModel:
    """Fully-actuated planar chain with point masses at the link tips.

    Parameters
    ----------
    link_lengths, link_masses : sequence of float
        One entry per link (metres, kilograms).
    joint_lower, joint_upper : sequence of float
        Joint limits in radians.
    gravity : 2-vector
        World-frame gravitational acceleration.
    actuated : sequence of bool, optional
        Actuation mask; defaults to all joints actuated.
    control_points : mapping of name to ``(link, offset)``, optional
        Points where task maps attach. ``end_effector`` must be one of them;
        when omitted, an ``"ee"`` point is placed at the tip of the last link.
    end_effector : str
        Name of the end-effector control point.
    """

    link_lengths: Sequence[float]
    link_masses: Sequence[float]
    joint_lower: Sequence[float]
    joint_upper: Sequence[float]
    gravity: Sequence[float] = DEFAULT_GRAVITY
    actuated: Sequence[bool] | None = None
    control_points: Mapping[str, ControlPoint | tuple] | None = None
    end_effector: str = "ee"
    _points: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.link_lengths = np.asarray(self.link_lengths, dtype=float).ravel()
        self.link_masses = np.asarray(self.link_masses, dtype=float).ravel()
        self.joint_lower = np.asarray(self.joint_lower, dtype=float).ravel()
        self.joint_upper = np.asarray(self.joint_upper, dtype=float).ravel()
        self.gravity = np.asarray(self.gravity, dtype=float).ravel()
        n = self.link_lengths.size
        if n == 0:
            raise ValueError("chain needs at least one link")
        for name in ("link_masses", "joint_lower", "joint_upper"):
            if getattr(self, name).size != n:
                raise ValueError(f"{name} must have {n} entries")
        if self.gravity.size != 2:
            raise ValueError("gravity must be a 2-vector")
        if np.any(self.link_lengths <= 0):
            raise ValueError("link lengths must be positive")
        if np.any(self.link_masses <= 0):
            raise ValueError("link masses must be positive")
        if np.any(self.joint_lower >= self.joint_upper):
            raise ValueError("joint_lower must be strictly below joint_upper")
        if self.actuated is None:
            self.actuated = np.ones(n, dtype=bool)
        else:
            self.actuated = np.asarray(self.actuated, dtype=bool).ravel()
            if self.actuated.size != n:
                raise ValueError(f"actuated must have {n} entries")

        points = dict(self.control_points or {})
        if not points:
            points[self.end_effector] = (n - 1, float(self.link_lengths[-1]))
        self._points = {}
        for name, cp in points.items():
            cp = cp if isinstance(cp, ControlPoint) else ControlPoint(int(cp[0]), float(cp[1]))
            if not 0 <= cp.link < n:
                raise ValueError(f"control point {name!r} references link {cp.link}")
            self._points[name] = cp
        if self.end_effector not in self._points:
            raise ValueError(f"end-effector point {self.end_effector!r} is not a control point")
        self.control_points = dict(self._points)

    @property
    def n_joints(self) -> int:
        return self.link_lengths.size

    @property
    def selection_matrix(self) -> np.ndarray:
        """Diagonal 0/1 actuation selection ``S``."""
        return np.diag(self.actuated.astype(float))

    def control_point(self, point: str) -> ControlPoint:
        try:
            return self._points[point]
        except KeyError:
            raise KeyError(f"unknown control point {point!r}") from None

    @classmethod
    def uniform(cls, n, length=1.0, mass=1.0, limit=np.pi, **kwargs) -> "ChainModel":
        """Chain of ``n`` identical links with symmetric joint limits."""
        return cls(
            link_lengths=np.full(n, length),
            link_masses=np.full(n, mass),
            joint_lower=np.full(n, -limit),
            joint_upper=np.full(n, limit),
            **kwargs,
        )


@dataclass
class GeneralizedState:
    q: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.dq = np.asarray(self.dq, dtype=float).ravel()
        if self.q.shape != self.dq.shape:
            raise ValueError("q and dq must have the same length")

    def copy(self) -> "GeneralizedState":
        return GeneralizedState(self.q.copy(), self.dq.copy())


def _frames(model: ChainModel, q):
    """Joint origins ``(n + 1, 2)`` and cumulative link angles ``(n,)``."""
    theta = np.cumsum(q)
    origins = np.zeros((theta.size + 1, 2))
    origins[1:, 0] = np.cumsum(model.link_lengths * np.cos(theta))
    origins[1:, 1] = np.cumsum(model.link_lengths * np.sin(theta))
    return origins, theta


def _point_position(origins, theta, cp: ControlPoint):
    t = theta[cp.link]
    o = origins[cp.link]
    return np.array([o[0] + cp.offset * math.cos(t), o[1] + cp.offset * math.sin(t)])


def _point_jacobian(origins, p, link, n):
    # Column k rotates p about joint k: R90 (p - o_k).
    J = np.zeros((2, n))
    rel = p - origins[: link + 1]
    J[0, : link + 1] = -rel[:, 1]
    J[1, : link + 1] = rel[:, 0]
    return J


def forward_kinematics(model: ChainModel, q, point: str) -> np.ndarray:
    """World-frame position of a control point."""
    cp = model.control_point(point)
    origins, theta = _frames(model, np.asarray(q, dtype=float))
    return _point_position(origins, theta, cp)


def point_jacobian(model: ChainModel, q, point: str) -> np.ndarray:
    """``2 x n`` Jacobian of a control point's position."""
    cp = model.control_point(point)
    origins, theta = _frames(model, np.asarray(q, dtype=float))
    p = _point_position(origins, theta, cp)
    return _point_jacobian(origins, p, cp.link, model.n_joints)


class KinematicsCache:
    """Control-point kinematics at one configuration: a single frame sweep,
    memoized per point. Returned arrays are shared; do not modify them."""

    __slots__ = ("model", "q", "origins", "theta", "_memo")

    def __init__(self, model: ChainModel, q):
        self.model = model
        self.q = np.asarray(q, dtype=float)
        self.origins, self.theta = _frames(model, self.q)
        self._memo = {}

    def point(self, name: str):
        hit = self._memo.get(name)
        if hit is None:
            cp = self.model.control_point(name)
            p = _point_position(self.origins, self.theta, cp)
            hit = self._memo[name] = (p, _point_jacobian(self.origins, p, cp.link, self.model.n_joints))
        return hit


def point_kinematics(model: ChainModel, q, point: str, kin: KinematicsCache | None = None):
    """Position and Jacobian of a control point from one frame sweep.

    With ``kin`` the values come from (and are memoized in) that cache.
    """
    if kin is not None:
        return kin.point(point)
    cp = model.control_point(point)
    origins, theta = _frames(model, np.asarray(q, dtype=float))
    p = _point_position(origins, theta, cp)
    return p, _point_jacobian(origins, p, cp.link, model.n_joints)


def jacobian_dot(model: ChainModel, q, dq, point: str, h: float = 1e-6) -> np.ndarray:
    """Time derivative of the point Jacobian along ``dq``.

    Symmetric directional difference ``(J(q + h dq) - J(q - h dq)) / 2h``.
    """
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    if q.shape != dq.shape:
        raise ValueError("q and dq must have the same length")
    return (point_jacobian(model, q + h * dq, point) - point_jacobian(model, q - h * dq, point)) / (2 * h)


@lru_cache(maxsize=32)
def _lower_mask(n):
    mask = np.tri(n)
    mask.flags.writeable = False
    return mask


def _tip_jacobians(model, q, origins=None):
    if origins is None:
        origins, _ = _frames(model, q)
    n = model.n_joints
    # rel[i, k] = p_i - o_k, zeroed where joint k lies beyond link i.
    rel = origins[1:, None, :] - origins[None, :n, :]
    mask = _lower_mask(n)
    rel *= mask[:, :, None]
    J = np.empty((n, 2, n))
    J[:, 0, :] = -rel[:, :, 1]
    J[:, 1, :] = rel[:, :, 0]
    return J, origins, mask


def mass_matrix(model: ChainModel, q) -> np.ndarray:
    """Joint-space inertia ``D = sum_i m_i J_i^T J_i`` over link tips."""
    J, _, _ = _tip_jacobians(model, np.asarray(q, dtype=float))
    return np.einsum("i,iak,ial->kl", model.link_masses, J, J)


def mass_matrix_derivatives(model: ChainModel, q) -> np.ndarray:
    """``dD[l] = dD/dq_l`` as an ``(n, n, n)`` array."""
    q = np.asarray(q, dtype=float)
    n = model.n_joints
    J, origins, mask = _tip_jacobians(model, q)
    # d^2 p_i / dq_k dq_l = -(p_i - o_max(k, l)) for k, l <= i.
    idx = np.maximum.outer(np.arange(n), np.arange(n))
    rel = origins[1:, None, None, :] - origins[idx][None, :, :, :]
    rel *= (mask[:, :, None] * mask[:, None, :])[..., None]
    H = -np.moveaxis(rel, 3, 1)  # (i, axis, k, l)
    # dD_kj/dq_l = sum_i m_i (H_i[:, k, l] . J_i[:, j] + J_i[:, k] . H_i[:, j, l])
    A = np.einsum("i,iakl,iaj->lkj", model.link_masses, H, J)
    return A + np.transpose(A, (0, 2, 1))


def coriolis_matrix(model: ChainModel, q, dq) -> np.ndarray:
    """Coriolis matrix from Christoffel symbols; ``Ddot - 2C`` is skew."""
    dq = np.asarray(dq, dtype=float)
    dD = mass_matrix_derivatives(model, q)
    # Gamma_kjl = 1/2 (dD_kj/dq_l + dD_kl/dq_j - dD_jl/dq_k)
    term1 = np.einsum("lkj,l->kj", dD, dq)
    term2 = np.einsum("jkl,l->kj", dD, dq)
    term3 = np.einsum("kjl,l->kj", dD, dq)
    return 0.5 * (term1 + term2 - term3)


def gravity_vector(model: ChainModel, q) -> np.ndarray:
    """Gradient of ``U = -sum_i m_i g . p_i``."""
    J, _, _ = _tip_jacobians(model, np.asarray(q, dtype=float))
    return -np.einsum("i,iak,a->k", model.link_masses, J, model.gravity)


def potential_energy(model: ChainModel, q) -> float:
    origins, _ = _frames(model, np.asarray(q, dtype=float))
    return float(-np.sum(model.link_masses * (origins[1:] @ model.gravity)))


def _dynamics_terms(model, q, dq):
    """``D``, ``C dq`` and ``G`` from a single frame sweep.

    ``C dq = sum_i m_i J_i^T (Jdot_i dq)``, where the tip bias acceleration
    is ``-sum_{j<=i} l_j w_j^2 u_j`` with ``w_j`` the absolute link rate.
    """
    q = np.asarray(q, dtype=float)
    dq = np.asarray(dq, dtype=float)
    origins, theta = _frames(model, q)
    J, _, _ = _tip_jacobians(model, q, origins)
    m = model.link_masses
    D = np.einsum("i,iak,ial->kl", m, J, J)
    steps = np.diff(origins, axis=0)
    bias = -np.cumsum(steps * (np.cumsum(dq) ** 2)[:, None], axis=0)
    Cdq = np.einsum("i,iak,ia->k", m, J, bias)
    G = -np.einsum("i,iak,a->k", m, J, model.gravity)
    return D, Cdq, G


def inverse_dynamics(model: ChainModel, q, dq, ddq) -> np.ndarray:
    """Torques ``D ddq + C dq + G`` for the contact-free, fully-actuated chain."""
    D, Cdq, G = _dynamics_terms(model, q, dq)
    return D @ np.asarray(ddq, dtype=float) + Cdq + G


def forward_dynamics(model: ChainModel, q, dq, tau) -> np.ndarray:
    """Accelerations ``D^{-1} (tau - C dq - G)``."""
    D, Cdq, G = _dynamics_terms(model, q, dq)
    return np.linalg.solve(D, np.asarray(tau, dtype=float) - Cdq - G)
