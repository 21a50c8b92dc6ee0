"""Input checks shared by the estimator and the scenario tooling."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_vector(v, size: int, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != size:
        raise ValueError(f"{name} has {v.size} entries, expected {size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def check_states(X, n_joints: int):
    """Split a state array into ``(q, dq)``.

    ``X`` has one row per sample laid out as ``[q_0..q_{n-1}, dq_0..dq_{n-1}]``;
    a single 1-D state is accepted and promoted to one row.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    X = check_array(X, dtype=float, ensure_2d=True)
    if X.shape[1] != 2 * n_joints:
        raise ValueError(f"X has {X.shape[1]} features, expected {2 * n_joints} (q and dq)")
    return X[:, :n_joints], X[:, n_joints:]

