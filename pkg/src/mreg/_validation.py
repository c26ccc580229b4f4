from __future__ import annotations

import numpy as np


def check_bags(X, n_instances=None, clip_len=None, frame_hw=None) -> np.ndarray:
    """Validate a batch of MIL bags and return it as uint8 ``[N, I, T, 3, H, W]``."""
    X = np.asarray(X)
    if X.ndim == 5:
        X = X[None]
    if X.ndim != 6 or X.shape[3] != 3:
        raise ValueError(f"expected bags of shape [N, I, T, 3, H, W], got {X.shape}")
    if X.dtype != np.uint8:
        if X.size and (X.min() < 0 or X.max() > 255):
            raise ValueError("pixel values must lie in [0, 255]")
        X = X.astype(np.uint8)
    for name, want, got in (("instances", n_instances, X.shape[1]),
                            ("clip length", clip_len, X.shape[2])):
        if want is not None and want != got:
            raise ValueError(f"bag has {got} {name}, estimator was fitted with {want}")
    if frame_hw is not None and tuple(X.shape[-2:]) != tuple(frame_hw):
        raise ValueError(f"frame size {X.shape[-2:]} differs from fitted size {tuple(frame_hw)}")
    return X


def check_grades(y, n: int) -> np.ndarray:
    y = np.asarray(y).ravel()
    if y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} labels for {n} bags")
    if not np.isin(y, (0, 1, 2)).all():
        raise ValueError("grades must be 0, 1 or 2")
    return y.astype(np.int64)
