"""Input checks shared by the estimators."""

import numpy as np


def check_batch(X, allow_ndim=(4, 5)) -> np.ndarray:
    """Return ``X`` as a float array of images (N x 3 x h x w) or clips (N x 3 x T x h x w)."""
    X = np.asarray(X)
    if X.dtype.kind != "f":
        X = X.astype(np.float32)
    if X.ndim not in allow_ndim:
        raise ValueError(f"expected a batch with ndim in {allow_ndim}, got shape {X.shape}")
    if len(X) == 0:
        raise ValueError("empty batch")
    if not np.isfinite(X).all():
        raise ValueError("batch contains NaN or Inf")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ValueError(f"expected {n} labels, got array of shape {y.shape}")
    if y.dtype.kind not in "iu":
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError("labels must be integers")
    y = y.astype(np.int64)
    if y.min() < 0:
        raise ValueError("labels must be non-negative")
    return y
