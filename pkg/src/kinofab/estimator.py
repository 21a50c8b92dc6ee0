"""Estimator-style wrapper so the controller composes with scikit-learn
tooling (``get_params``/``set_params``, ``clone``, pipelines of policies)."""

from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .behaviors import BehaviorSpec, BehaviorTree, World
from .model import ChainModel, GeneralizedState, inverse_dynamics
from .resolution import ControlOptions, control_step
from .sim import integrate_step
from .validation import check_states, check_vector


class KinodynamicFabric(BaseEstimator):
    """Joint-acceleration policy composed from primitive behaviors.

    ``fit`` checks the model and behaviors and freezes private copies of them;
    there is nothing to learn. ``predict`` maps states to commanded joint
    accelerations.

    Parameters
    ----------
    model : ChainModel
    behaviors : list of BehaviorSpec
    nodes : list of TreeNode, optional
        High-level behaviors driving activation and set-points.
    speed_gate : {"gated", "strict"}
    gate_eps : float
        Floor on the squared task speed in gated mode.
    delta : float
        Regularization of the inertia-weighted pseudo-inverse.
    fd_step : float
        Step for the directional difference giving ``Jdot*``.
    pinv_rtol : float, optional
        Relative singular-value cutoff of the resolution pseudo-inverse.

    Examples
    --------
    >>> from kinofab import ChainModel, BehaviorSpec, KinodynamicFabric
    >>> model = ChainModel.uniform(2)
    >>> goal = BehaviorSpec("posture", "attractor", target=[0.5, 0.0])
    >>> fab = KinodynamicFabric(model, [goal]).fit()
    >>> fab.predict([[0.0, 0.0, 0.0, 0.0]]).shape
    (1, 2)
    """

    def __init__(self, model=None, behaviors=None, nodes=None, speed_gate="gated", gate_eps=1.0,
                 delta=1e-6, fd_step=1e-6, pinv_rtol=None):
        self.model = model
        self.behaviors = behaviors
        self.nodes = nodes
        self.speed_gate = speed_gate
        self.gate_eps = gate_eps
        self.delta = delta
        self.fd_step = fd_step
        self.pinv_rtol = pinv_rtol

    def fit(self, X=None, y=None):
        if not isinstance(self.model, ChainModel):
            raise TypeError("model must be a ChainModel")
        if not self.behaviors:
            raise ValueError("at least one behavior is required")
        if not all(isinstance(b, BehaviorSpec) for b in self.behaviors):
            raise TypeError("behaviors must be BehaviorSpec instances")
        self.options_ = ControlOptions(speed_gate=self.speed_gate, gate_eps=self.gate_eps,
                                       delta=self.delta, fd_step=self.fd_step, pinv_rtol=self.pinv_rtol)
        if self.options_.gate_eps <= 0 or self.options_.delta <= 0 or self.options_.fd_step <= 0:
            raise ValueError("gate_eps, delta and fd_step must be positive")
        self.tree_ = BehaviorTree(copy.deepcopy(list(self.behaviors)), copy.deepcopy(list(self.nodes or [])))
        self.n_joints_ = self.model.n_joints
        self.n_features_in_ = 2 * self.n_joints_
        if X is not None:
            check_states(X, self.n_joints_)
        return self

    def step(self, q, dq, world: World | None = None, t: float = 0.0):
        """One control iteration; returns ``(ResolutionResult, tau)``."""
        check_is_fitted(self)
        state = GeneralizedState(check_vector(q, self.n_joints_, "q"), check_vector(dq, self.n_joints_, "dq"))
        return control_step(self.model, state, self.tree_, world, t, self.options_)

    def predict(self, X, world: World | None = None, t: float = 0.0) -> np.ndarray:
        """Joint accelerations for each state row ``[q, dq]``."""
        check_is_fitted(self)
        Q, DQ = check_states(X, self.n_joints_)
        return np.array([self.step(q, dq, world, t)[0].ddq for q, dq in zip(Q, DQ)])

    def predict_torque(self, X, world: World | None = None, t: float = 0.0) -> np.ndarray:
        """Inverse-dynamics torques realizing :meth:`predict`."""
        Q, DQ = check_states(X, self.n_joints_)
        ddq = self.predict(X, world, t)
        return np.array([inverse_dynamics(self.model, q, dq, a) for q, dq, a in zip(Q, DQ, ddq)])

    def rollout(self, q0, dq0=None, dt: float = 1e-3, steps: int = 1000, world: World | None = None):
        """Integrate the closed loop; returns an ``(steps + 1, 2n)`` state array."""
        check_is_fitted(self)
        n = self.n_joints_
        state = GeneralizedState(check_vector(q0, n, "q0"),
                                 np.zeros(n) if dq0 is None else check_vector(dq0, n, "dq0"))
        out = np.empty((steps + 1, 2 * n))
        out[0] = np.concatenate([state.q, state.dq])
        for k in range(steps):
            result, _ = self.step(state.q, state.dq, world, k * dt)
            state = integrate_step(state, result.ddq, dt)
            out[k + 1] = np.concatenate([state.q, state.dq])
        return out
