"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError


def check_image_batch(X) -> np.ndarray:
    """Coerce to (n, 1, H, W) float32 square grayscale images."""
    arr = np.asarray(X)
    if arr.ndim == 3:
        arr = arr[:, None, :, :]
    if arr.ndim != 4 or arr.shape[1] != 1:
        raise DataError(
            f"X must be (n, H, W) or (n, 1, H, W) grayscale images, got shape {arr.shape}"
        )
    if arr.shape[0] == 0:
        raise DataError("X is empty")
    if arr.shape[2] != arr.shape[3]:
        raise DataError(f"images must be square, got {arr.shape[2]}x{arr.shape[3]}")
    arr = arr.astype(np.float32)
    if not np.isfinite(arr).all():
        raise DataError("X contains non-finite values")
    return arr


def check_mask_batch(y, n: int, hw: tuple[int, int]) -> np.ndarray:
    """Coerce to (n, 3, H, W) binary uint8 organ masks matching X."""
    arr = np.asarray(y)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise DataError(f"y must be (n, 3, H, W) binary organ masks, got shape {arr.shape}")
    if arr.shape[0] != n:
        raise DataError(f"y has {arr.shape[0]} samples but X has {n}")
    if arr.shape[2:] != hw:
        raise DataError(f"y spatial dims {arr.shape[2:]} do not match X {hw}")
    if not np.isin(arr, (0, 1)).all():
        raise DataError("y masks must be binary (0/1)")
    return arr.astype(np.uint8)


def check_is_fitted(estimator, attributes: tuple[str, ...] = ("net_",)) -> None:
    missing = [a for a in attributes if getattr(estimator, a, None) is None]
    if missing:
        raise ConfigError(
            f"{type(estimator).__name__} is not fitted yet; call fit before using {missing}"
        )
