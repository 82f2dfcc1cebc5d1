"""Input validation helpers shared by the estimators and pipeline stages."""

import numpy as np
from sklearn.utils import check_array


def check_points(points, name="points", allow_empty=True) -> np.ndarray:
    """Return an (M, 3) float64 array of finite points."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0 and allow_empty:
        return arr.reshape(0, 3)
    arr = check_array(arr, dtype=np.float64, ensure_min_samples=0 if allow_empty else 1,
                      input_name=name)
    if arr.shape[1] != 3:
        raise ValueError(f"{name} must have shape (M, 3), got {arr.shape}")
    return arr


def check_pixels(pixels, name="pixels") -> np.ndarray:
    """Return an (M, 2) float64 array; non-finite entries are allowed."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim == 1 and arr.shape == (2,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (M, 2), got {arr.shape}")
    return arr


def check_positive(value, name):
    if value is None or not value > 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value


def check_frame(t, n_frames, name="frame"):
    if not isinstance(t, (int, np.integer)) or not 1 <= t <= n_frames:
        raise ValueError(f"{name} must be an integer in [1, {n_frames}], got {t!r}")
    return int(t)
