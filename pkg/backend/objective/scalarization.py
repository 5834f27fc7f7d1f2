"""Set-based scalarizations of a loss matrix and their gradients.

A loss matrix ``F`` has one row per loss and one column per perturbation in
the set. The attack maximizes the simplified objective

    g(F) = smooth_min_i( smooth_max_k F[i, k] )

i.e. the worst loss after each loss has picked its best set member. The
exact (non-smooth) and weighted forms are kept for bounds and comparisons.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from backend.classifier.dataset import LabeledPoint
from backend.classifier.network import ClassifierWeights, forward, forward_backward
from backend.errors import InvalidArgumentError
from backend.losses.surrogates import LossId, loss_and_grad_batch, losses_and_grads, to_loss_id
from backend.numerics.smooth import Mat, as_mat, as_vec, log_sum_exp_rows, smooth_min, softmax_rows

logger = logging.getLogger("MOSAttack")

DEFAULT_MU = 1.0


@dataclass(frozen=True, eq=False)
class PerturbationSet:
    """K perturbations of length d, stored as a (K, d) array."""

    deltas: np.ndarray

    def __post_init__(self) -> None:
        deltas = np.array(self.deltas, dtype=np.float64)
        if deltas.ndim == 1:
            deltas = deltas.reshape(1, -1)
        object.__setattr__(self, "deltas", as_mat(deltas, "perturbation set"))

    @property
    def K(self) -> int:
        return int(self.deltas.shape[0])

    @property
    def d(self) -> int:
        return int(self.deltas.shape[1])


@dataclass(frozen=True, eq=False)
class LossMatrix:
    """values[i, k] = loss ``losses[i]`` at perturbation k."""

    values: np.ndarray
    losses: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        values = as_mat(self.values, "loss matrix")
        losses = tuple(int(v) for v in self.losses) or tuple(range(values.shape[0]))
        if len(losses) != values.shape[0]:
            raise InvalidArgumentError(f"{len(losses)} loss ids for {values.shape[0]} rows")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "losses", losses)

    @property
    def m(self) -> int:
        return int(self.values.shape[0])

    @property
    def K(self) -> int:
        return int(self.values.shape[1])

    def to_dict(self) -> Dict[str, Any]:
        return {"losses": list(self.losses), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LossMatrix":
        return cls(np.asarray(data["values"], dtype=np.float64), tuple(data.get("losses", ())))


@dataclass(frozen=True, eq=False)
class ScalarizationParams:
    """Weights w (positive), ideal point z* and smoothing mu."""

    w: np.ndarray
    z_star: np.ndarray
    mu: float = DEFAULT_MU

    def __post_init__(self) -> None:
        w = as_vec(self.w, "weights")
        z = as_vec(self.z_star, "ideal point")
        if w.shape != z.shape:
            raise InvalidArgumentError(f"weights {w.shape} and ideal point {z.shape} differ in length")
        if np.any(w <= 0):
            raise InvalidArgumentError("weights must be strictly positive")
        if not self.mu > 0:
            raise InvalidArgumentError(f"mu must be positive, got {self.mu}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "z_star", z)

    @classmethod
    def uniform(cls, m: int, mu: float = DEFAULT_MU) -> "ScalarizationParams":
        return cls(np.ones(m), np.zeros(m), mu)


def _values(F) -> Mat:
    return F.values if isinstance(F, LossMatrix) else as_mat(F, "loss matrix")


def _check_params(F: Mat, params: ScalarizationParams) -> None:
    if params.w.size != F.shape[0]:
        raise InvalidArgumentError(f"{params.w.size} weights for {F.shape[0]} losses")


def tchebycheff(fvals, params: ScalarizationParams) -> float:
    """Weighted Tchebycheff value ``min_i w_i |f_i - z*_i|``."""
    f = as_vec(fvals, "objective values")
    if f.size != params.w.size:
        raise InvalidArgumentError(f"{f.size} objective values for {params.w.size} weights")
    return float(np.min(params.w * np.abs(f - params.z_star)))


def set_objective_exact(F, params: ScalarizationParams) -> float:
    """Non-smooth set objective ``min_i w_i |max_k F[i, k] - z*_i|``."""
    values = _values(F)
    _check_params(values, params)
    return float(np.min(params.w * np.abs(values.max(axis=1) - params.z_star)))


def set_objective_smooth(F, params: ScalarizationParams) -> float:
    """Smoothed weighted form with absolute values kept."""
    values = _values(F)
    _check_params(values, params)
    row_max = log_sum_exp_rows(values, params.mu)
    return smooth_min(params.w * np.abs(row_max - params.z_star), params.mu)


def set_objective_simplified(F, mu: float = DEFAULT_MU) -> float:
    """Simplified objective: smooth min over losses of each loss's smooth max over the set."""
    values = _values(F)
    return smooth_min(log_sum_exp_rows(values, mu), mu)


def objective_partials(F, mu: float = DEFAULT_MU) -> Tuple[float, Mat]:
    """Simplified objective and its partials ``dg/dF[i, k]``.

    The partials factor as a_i * b_ik with a = softmax(-S/mu) over the row
    smooth maxima S and b_i = softmax(F[i]/mu); they sum to 1.
    """
    values = _values(F)
    if not mu > 0:
        raise InvalidArgumentError(f"mu must be positive, got {mu}")
    return _partials(values, mu)


def _partials(values: Mat, mu: float) -> Tuple[float, Mat]:
    """``objective_partials`` on an already validated matrix."""
    m, K = values.shape
    if m == 1 and K == 1:
        return float(values[0, 0]), np.ones((1, 1))
    # a single member: every row's smooth max is that member's value
    row_max = log_sum_exp_rows(values, mu) if K > 1 else values[:, 0]
    inner = softmax_rows(values, mu) if K > 1 else np.ones((m, 1))
    if m == 1:
        return float(row_max[0]), inner
    neg = -row_max / mu
    shift = neg.max()
    e = np.exp(neg - shift)
    total = e.sum()
    outer = e / total
    return float(-mu * (shift + np.log(total))), outer[:, None] * inner


def _as_loss_ids(losses: Sequence) -> Tuple[LossId, ...]:
    ids = tuple(to_loss_id(v) for v in losses)
    if not ids:
        raise InvalidArgumentError("loss list must be non-empty")
    return ids


def loss_matrix_at(model: ClassifierWeights, X, y: int, losses: Sequence) -> LossMatrix:
    """Loss matrix for K perturbed inputs given directly as rows of X."""
    ids = _as_loss_ids(losses)
    logits = forward(model, np.atleast_2d(X))
    rows = [values for values, _ in losses_and_grads(ids, logits, [y])]
    return LossMatrix(np.vstack(rows), tuple(int(i) for i in ids))


def loss_matrix(
    model: ClassifierWeights, point: LabeledPoint, delta_set: PerturbationSet, losses: Sequence
) -> LossMatrix:
    """values[i][k] = loss i on the logits of x + delta_k."""
    return loss_matrix_at(model, point.x + delta_set.deltas, point.y, losses)


@dataclass
class SetGradient:
    """Objective value, loss matrix, logits and per-member input gradients."""

    value: float
    matrix: LossMatrix
    grads: np.ndarray
    logits: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]


def grad_objective_at(
    model: ClassifierWeights, X, y: int, losses: Sequence, mu: float = DEFAULT_MU
) -> SetGradient:
    """Gradient of the simplified objective w.r.t. each row of X.

    One forward pass over the K rows, the m loss kernels on the shared
    logits, then one backward pass of the partial-weighted logits gradient.
    """
    if not mu > 0:
        raise InvalidArgumentError(f"mu must be positive, got {mu}")
    ids = _as_loss_ids(losses)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    captured: Dict[str, Any] = {}

    def combine(logits: np.ndarray) -> np.ndarray:
        results = losses_and_grads(ids, logits, [y])
        F = np.vstack([vals for vals, _ in results])
        value, partials = _partials(F, mu)
        grad_logits = partials[0][:, None] * results[0][1]
        for i in range(1, len(results)):
            grad_logits += partials[i][:, None] * results[i][1]
        captured.update(value=value, F=F)
        return grad_logits

    logits, grads = forward_backward(model, X, combine)
    return SetGradient(
        value=captured["value"],
        matrix=LossMatrix(captured["F"], tuple(int(i) for i in ids)),
        grads=grads,
        logits=logits,
    )


def grad_set_objective(
    model: ClassifierWeights,
    point: LabeledPoint,
    delta_set: PerturbationSet,
    losses: Sequence,
    mu: float = DEFAULT_MU,
) -> SetGradient:
    """Gradient w.r.t. each delta_k; equal to the gradient w.r.t. x + delta_k."""
    return grad_objective_at(model, point.x + delta_set.deltas, point.y, losses, mu)


def single_loss_grad_at(model: ClassifierWeights, X, y: int, loss: LossId) -> SetGradient:
    """Per-row value and input gradient of one loss, rows treated independently."""
    loss = to_loss_id(loss)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    captured: Dict[str, np.ndarray] = {}

    def grad_fn(logits: np.ndarray) -> np.ndarray:
        values, g = loss_and_grad_batch(loss, logits, [y])
        captured["values"] = values
        return g

    logits, grads = forward_backward(model, X, grad_fn)
    values = captured["values"]
    return SetGradient(
        value=float(values.max()),
        matrix=LossMatrix(values.reshape(1, -1), (int(loss),)),
        grads=grads,
        logits=logits,
    )
