"""Input checks shared by the estimator and the CLI."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import ShapeError


def check_sequences(X, n_features=None):
    """Coerce ``X`` to a float64 array of shape ``(S, T, X)``.

    A 2-D array is read as ``(S, T)`` with a single input feature.
    """
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64, ensure_all_finite=True)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise ShapeError(f"expected sequences of shape (S, T, X), got {X.shape}")
    if X.shape[0] < 1 or X.shape[1] < 1 or X.shape[2] < 1:
        raise ShapeError(f"empty sequence array {X.shape}")
    if n_features is not None and X.shape[2] != n_features:
        raise ShapeError(f"X has {X.shape[2]} features per step, the model expects {n_features}")
    return X


def check_targets(y, n_sequences, length):
    """Coerce targets to ``(S, T, Y)``.

    Returns ``(targets, per_step)`` where ``per_step`` is False when only one
    target per sequence was given (shape ``(S,)`` or ``(S, Y)``); that target
    is then placed at every step.
    """
    y = check_array(y, allow_nd=True, ensure_2d=False, dtype=np.float64, ensure_all_finite=True)
    if y.shape[0] != n_sequences:
        raise ShapeError(f"X has {n_sequences} sequences but y has {y.shape[0]}")
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim == 2:
        return np.repeat(y[:, None, :], length, axis=1), False
    if y.ndim == 3:
        if y.shape[1] != length:
            raise ShapeError(f"y has {y.shape[1]} steps, X has {length}")
        return y, True
    raise ShapeError(f"y must be 1-, 2- or 3-D, got shape {y.shape}")
