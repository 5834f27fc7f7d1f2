"""Dense numeric primitives and smooth max/min operators.

Everything here works in float64. Vectors are 1-D ``np.ndarray`` and
matrices 2-D row-major ``np.ndarray``; the helpers ``as_vec`` and ``as_mat``
validate and convert inputs; downstream code assumes finite data.
"""

import logging
from typing import Callable

import numpy as np

from backend.errors import InvalidArgumentError, NumericError

logger = logging.getLogger("MOSAttack")

Vec = np.ndarray
Mat = np.ndarray


def as_vec(values, name: str = "vector", allow_empty: bool = False) -> Vec:
    """Convert to a finite float64 vector."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim == 0:
        vec = vec.reshape(1)
    if vec.ndim != 1:
        raise InvalidArgumentError(f"{name} must be one-dimensional, got shape {vec.shape}")
    if vec.size == 0 and not allow_empty:
        raise InvalidArgumentError(f"{name} must be non-empty")
    if not np.all(np.isfinite(vec)):
        raise NumericError(f"{name} contains non-finite entries")
    return vec


def as_mat(values, name: str = "matrix") -> Mat:
    """Convert to a finite float64 matrix with positive dimensions."""
    mat = np.asarray(values, dtype=np.float64)
    if mat.ndim != 2:
        raise InvalidArgumentError(f"{name} must be two-dimensional, got shape {mat.shape}")
    if mat.shape[0] == 0 or mat.shape[1] == 0:
        raise InvalidArgumentError(f"{name} must have positive rows and cols, got {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise NumericError(f"{name} contains non-finite entries")
    return mat


def _check_scale(scale: float) -> float:
    if not scale > 0 or not np.isfinite(scale):
        raise InvalidArgumentError(f"smoothing scale must be a positive finite number, got {scale}")
    return float(scale)


def log_sum_exp(xs, scale: float = 1.0) -> float:
    """Scaled log-sum-exp ``scale * log(sum(exp(x_i / scale)))``.

    The maximum is shifted out first, so arguments up to 1e6 in magnitude
    never overflow, and a singleton returns its element exactly.

    Raises:
        InvalidArgumentError: On empty input or a non-positive scale.
    """
    scale = _check_scale(scale)
    xs = as_vec(xs, "log_sum_exp input")
    x_max = xs.max()
    return float(x_max + scale * np.log(np.sum(np.exp((xs - x_max) / scale))))


def log_sum_exp_rows(mat: Mat, scale: float = 1.0) -> Vec:
    """Row-wise ``log_sum_exp`` of a matrix, same max-shift convention."""
    scale = _check_scale(scale)
    row_max = mat.max(axis=1, keepdims=True)
    return row_max[:, 0] + scale * np.log(np.sum(np.exp((mat - row_max) / scale), axis=1))


def softmax_rows(mat: Mat, scale: float = 1.0) -> Mat:
    """Row-wise softmax of ``mat / scale`` (the gradient of ``log_sum_exp_rows``)."""
    shifted = np.exp((mat - mat.max(axis=1, keepdims=True)) / scale)
    return shifted / shifted.sum(axis=1, keepdims=True)


def smooth_max(xs, mu: float) -> float:
    """Smooth maximum; ``max(xs) <= smooth_max(xs, mu) <= max(xs) + mu*log(n)``."""
    return log_sum_exp(xs, mu)


def smooth_min(xs, mu: float) -> float:
    """Smooth minimum, defined as ``-smooth_max(-xs, mu)``."""
    return -smooth_max(-as_vec(xs, "smooth_min input"), mu)


def finite_diff_grad(fn: Callable[[Vec], float], x, h: float = 1e-6) -> Vec:
    """Central-difference gradient of a scalar function.

    Args:
        fn: Real-valued function of a vector.
        x: Point at which to differentiate.
        h: Step, within [1e-7, 1e-3].

    Returns:
        Vector of ``(fn(x + h e_i) - fn(x - h e_i)) / (2h)``.

    Raises:
        NumericError: If fn returns a non-finite value at a probe point.
    """
    if not 1e-7 <= h <= 1e-3:
        raise InvalidArgumentError(f"finite-difference step must be in [1e-7, 1e-3], got {h}")
    x = as_vec(x, "finite_diff_grad point")
    grad = np.zeros_like(x)
    probe = x.copy()
    for i in range(x.size):
        probe[i] = x[i] + h
        f_plus = float(fn(probe))
        probe[i] = x[i] - h
        f_minus = float(fn(probe))
        probe[i] = x[i]
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
