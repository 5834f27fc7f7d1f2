"""Surrogate attack losses and their analytic logits gradients.

Every loss maps (logits h, true class y) to a scalar that the attack
maximizes. Kernels are vectorized over rows: they take an (n, C) logits
matrix and a length-n label vector and return per-row values and an (n, C)
gradient, so one call covers all K members of a perturbation set.

Non-smooth selections (best other class, sorted positions) are frozen at the
current argmax / permutation when differentiating; ties resolve to the
lowest class index.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import Callable, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from backend.errors import InvalidArgumentError, NumericError, UnsupportedLossError
from backend.numerics.smooth import Vec, as_mat, as_vec, softmax_rows

logger = logging.getLogger("MOSAttack")

PROB_CLAMP = 1e-12
DLR_GUARD = 1e-12


class LossId(IntEnum):
    CE = 0
    MARGIN = 1
    DLR = 2
    BOOSTED_CE = 3
    SEARCHED_1 = 4
    SEARCHED_2 = 5
    SEARCHED_3 = 6
    SEARCHED_4 = 7


ALL_LOSSES: Tuple[LossId, ...] = tuple(LossId)

# Named loss subsets accepted wherever a loss list is.
PRESETS: Dict[str, Tuple[LossId, ...]] = {
    "MOS-8": ALL_LOSSES,
    "MOS-3": (LossId.CE, LossId.MARGIN, LossId.DLR),
    "MOS-3*": (LossId.SEARCHED_2, LossId.SEARCHED_3, LossId.SEARCHED_4),
}


def softmax(h) -> Vec:
    """Max-shifted softmax of a logits vector."""
    h = as_vec(h, "logits")
    return softmax_rows(h.reshape(1, -1))[0]


@dataclass(frozen=True, eq=False)
class LogitContext:
    """Logits plus the quantities every loss formula reads."""

    h: np.ndarray
    y: int
    p: np.ndarray
    pi: np.ndarray
    y_onehot: np.ndarray

    @classmethod
    def from_logits(cls, h, y: int) -> "LogitContext":
        h = as_vec(h, "logits")
        if h.size < 2:
            raise InvalidArgumentError(f"need at least 2 logits, got {h.size}")
        if not 0 <= int(y) < h.size:
            raise InvalidArgumentError(f"class {y} out of range for {h.size} logits")
        onehot = np.zeros_like(h)
        onehot[int(y)] = 1.0
        pi = np.argsort(-h, kind="stable")
        return cls(h=h, y=int(y), p=softmax(h), pi=pi, y_onehot=onehot)

    @property
    def n_classes(self) -> int:
        return int(self.h.size)


# ---------------------------------------------------------------------------
# Row-wise helpers
# ---------------------------------------------------------------------------


def _rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=1, keepdims=True)


def _softmax_vjp(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax output back to its input."""
    return s * (g - _rowdot(s, g))


def _onehot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


class LogitRows:
    """Validated (n, C) logits and labels, with derived quantities computed once.

    Every kernel reads from one instance, so evaluating m losses on the same
    logits pays for the softmax, one-hot and best-other-class lookups once.
    Cached arrays are shared between kernels and must not be written to.
    """

    def __init__(self, H: np.ndarray, labels: np.ndarray):
        self.H = H
        self.labels = labels
        self.rows = np.arange(labels.size)

    @property
    def n_classes(self) -> int:
        return int(self.H.shape[1])

    @cached_property
    def p(self) -> np.ndarray:
        return softmax_rows(self.H)

    @cached_property
    def onehot(self) -> np.ndarray:
        return _onehot(self.labels, self.n_classes)

    @cached_property
    def best_other(self) -> np.ndarray:
        masked = self.H.copy()
        masked[self.rows, self.labels] = -np.inf
        return np.argmax(masked, axis=1)

    @cached_property
    def true_logit(self) -> np.ndarray:
        return self.H[self.rows, self.labels]


# ---------------------------------------------------------------------------
# Kernels: LogitRows -> (values (n,), grads (n, C))
# ---------------------------------------------------------------------------

Kernel = Callable[[LogitRows], Tuple[np.ndarray, np.ndarray]]


def _cross_entropy(r: LogitRows):
    shifted = r.H - r.H.max(axis=1, keepdims=True)
    values = np.log(np.exp(shifted).sum(axis=1)) - shifted[r.rows, r.labels]
    return values, r.p - r.onehot


def _margin(r: LogitRows):
    j = r.best_other
    grads = np.zeros_like(r.H)
    grads[r.rows, j] = 1.0
    grads[r.rows, r.labels] = -1.0
    return r.H[r.rows, j] - r.true_logit, grads


def _dlr(r: LogitRows):
    H, rows = r.H, r.rows
    numer, grad_numer = _margin(r)
    order = np.argsort(-H, axis=1, kind="stable")
    top, third = order[:, 0], order[:, 2]
    denom = H[rows, top] - H[rows, third] + DLR_GUARD
    grad_denom = np.zeros_like(H)
    grad_denom[rows, top] += 1.0
    grad_denom[rows, third] -= 1.0
    values = numer / denom
    grads = grad_numer / denom[:, None] - (numer / denom**2)[:, None] * grad_denom
    return values, grads


def _boosted_ce(r: LogitRows):
    p, rows = r.p, r.rows
    j = r.best_other
    onehot_j = _onehot(j, r.n_classes)

    py_raw = p[rows, r.labels]
    q_raw = p[rows, j]
    py = np.clip(py_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    q = np.clip(q_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    values = -np.log(py) - np.log(1.0 - q)

    # clamped terms are flat
    live_y = (py_raw == py)[:, None]
    live_q = (q_raw == q)[:, None]
    grads = live_y * (p - r.onehot) + live_q * (q / (1.0 - q))[:, None] * (onehot_j - p)
    return values, grads


def _searched_1(r: LogitRows):
    p, rows = r.p, r.rows
    top = np.argmax(p, axis=1)
    p_max = p[rows, top][:, None]
    e = np.exp(10.0 * p / p_max)
    values = e.sum(axis=1)
    g_p = 10.0 * e / p_max
    g_p[rows, top] -= np.sum(10.0 * e * p, axis=1) / p_max[:, 0] ** 2
    return values, _softmax_vjp(p, g_p)


def _searched_2(r: LogitRows):
    H, rows = r.H, r.rows
    s = softmax_rows(5.0 * H)
    q = softmax_rows(H + 2.0 * s)
    a = np.argmax(q, axis=1)
    values = np.exp(-q[rows, a])
    g_q = np.zeros_like(H)
    g_q[rows, a] = -values
    g_u = _softmax_vjp(q, g_q)
    return values, g_u + 10.0 * _softmax_vjp(s, g_u)


def _searched_3(r: LogitRows):
    H = r.H
    e_h = np.exp(H)
    b = softmax_rows(2.0 * e_h * H)
    c = softmax_rows(-b)
    t = softmax_rows(2.0 * H)
    d = t + 2.0 * r.onehot
    values = np.sum(c * d, axis=1)
    g_b = -_softmax_vjp(c, d)
    g_a = _softmax_vjp(b, g_b)
    return values, g_a * 2.0 * e_h * (1.0 + H) + 2.0 * _softmax_vjp(t, c)


def _searched_4(r: LogitRows):
    t = softmax_rows(2.0 * r.H)
    q = softmax_rows(t + r.H - r.onehot)
    res = q - r.onehot
    values = np.sum(res**2, axis=1)
    g_u = _softmax_vjp(q, 2.0 * res)
    return values, g_u + 2.0 * _softmax_vjp(t, g_u)


@dataclass(frozen=True)
class LossSpec:
    loss_id: LossId
    name: str
    short: str
    min_classes: int
    kernel: Kernel


LOSS_REGISTRY: Dict[LossId, LossSpec] = {
    spec.loss_id: spec
    for spec in (
        LossSpec(LossId.CE, "Cross Entropy", "CE", 2, _cross_entropy),
        LossSpec(LossId.MARGIN, "Margin", "Margin", 2, _margin),
        LossSpec(LossId.DLR, "Difference of Logits Ratio", "DLR", 3, _dlr),
        LossSpec(LossId.BOOSTED_CE, "Boosted Cross Entropy", "BCE", 2, _boosted_ce),
        LossSpec(LossId.SEARCHED_1, "Searched 1", "S1", 2, _searched_1),
        LossSpec(LossId.SEARCHED_2, "Searched 2", "S2", 2, _searched_2),
        LossSpec(LossId.SEARCHED_3, "Searched 3", "S3", 2, _searched_3),
        LossSpec(LossId.SEARCHED_4, "Searched 4", "S4", 2, _searched_4),
    )
}


def to_loss_id(value: Union[int, str, LossId]) -> LossId:
    try:
        return LossId(int(value))
    except (TypeError, ValueError) as e:
        raise InvalidArgumentError(f"unknown loss id {value!r}; expected an integer in 0..7") from e


def parse_losses(value: Union[str, int, Iterable[Union[int, str]]]) -> Tuple[LossId, ...]:
    """Resolve a preset name, a comma list ("0,1,2") or a sequence to loss ids."""
    if isinstance(value, str):
        if value in PRESETS:
            return PRESETS[value]
        items: Sequence = [v for v in value.split(",") if v.strip()]
    elif isinstance(value, (int, np.integer)):
        items = [value]
    else:
        items = list(value)
    if not items:
        raise InvalidArgumentError("loss list must be non-empty")
    return tuple(to_loss_id(str(v).strip() if isinstance(v, str) else v) for v in items)


def preset_name(losses: Sequence[LossId]) -> str:
    """Preset label for a loss list, or "MOS-<m>" when it matches none."""
    key = tuple(losses)
    for name, ids in PRESETS.items():
        if ids == key:
            return name
    return f"MOS-{len(key)}"


def logit_rows(H, labels, losses: Sequence[LossId] = ()) -> LogitRows:
    """Validate a logits batch once for every loss in ``losses``.

    Args:
        H: (n, C) logits.
        labels: Length-n true classes (or one class broadcast to every row).
        losses: Losses the batch will be scored with; checked for class count.

    Raises:
        InvalidArgumentError: On shape or label errors.
        UnsupportedLossError: If the class count is too small for a loss.
    """
    H = as_mat(H, "logits")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 1 and H.shape[0] > 1:
        labels = np.full(H.shape[0], labels[0])
    if labels.size != H.shape[0]:
        raise InvalidArgumentError(f"{labels.size} labels for {H.shape[0]} logit rows")
    if H.shape[1] < 2:
        raise InvalidArgumentError(f"need at least 2 classes, got {H.shape[1]}")
    for loss_id in losses:
        spec = LOSS_REGISTRY[loss_id]
        if H.shape[1] < spec.min_classes:
            raise UnsupportedLossError(
                spec.loss_id, f"loss {int(spec.loss_id)} ({spec.name}) needs at least {spec.min_classes} classes"
            )
    if labels.min() < 0 or labels.max() >= H.shape[1]:
        raise InvalidArgumentError(f"labels must be in [0, {H.shape[1]})")
    return LogitRows(H, labels)


def losses_and_grads(losses: Sequence, H, labels) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Per-row values and logits gradients of several losses on one logits batch.

    The batch is validated once and the shared quantities (softmax, one-hot,
    best other class) are computed once for all losses.

    Raises:
        UnsupportedLossError: If the class count is too small for a loss.
        NumericError: If a result is not finite; the message names the loss.
    """
    ids = tuple(to_loss_id(v) for v in losses)
    rows = logit_rows(H, labels, ids)
    out = []
    with np.errstate(over="ignore", invalid="ignore"):
        for loss_id in ids:
            values, grads = LOSS_REGISTRY[loss_id].kernel(rows)
            if not (np.all(np.isfinite(values)) and np.all(np.isfinite(grads))):
                raise NumericError("non-finite loss or gradient", loss_id=int(loss_id))
            out.append((values, grads))
    return out


def loss_and_grad_batch(loss_id: LossId, H, labels) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row loss values and logits gradients of one loss.

    Args:
        loss_id: Which loss.
        H: (n, C) logits.
        labels: Length-n true classes (or one class broadcast to every row).

    Raises:
        UnsupportedLossError: If the class count is too small for the loss.
        NumericError: If the result is not finite; the message names the loss.
    """
    return losses_and_grads((loss_id,), H, labels)[0]


def eval_loss_batch(loss_id: LossId, H, labels) -> np.ndarray:
    return loss_and_grad_batch(loss_id, H, labels)[0]


def eval_loss(loss_id: LossId, ctx: LogitContext) -> float:
    """Scalar loss value for one logits vector."""
    values, _ = loss_and_grad_batch(loss_id, ctx.h.reshape(1, -1), [ctx.y])
    return float(values[0])


def grad_loss_logits(loss_id: LossId, ctx: LogitContext) -> Vec:
    """Analytic gradient of ``eval_loss`` w.r.t. the logits."""
    _, grads = loss_and_grad_batch(loss_id, ctx.h.reshape(1, -1), [ctx.y])
    return grads[0]


def short_name(loss_id: Union[int, LossId]) -> str:
    return LOSS_REGISTRY[to_loss_id(loss_id)].short
