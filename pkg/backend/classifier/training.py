"""Deterministic minibatch training for the toy classifier."""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from backend.classifier.dataset import Dataset, make_blobs
from backend.classifier.network import (
    ClassifierWeights,
    forward_backward,
    init_weights,
    parameter_gradients,
    predict_batch,
)
from backend.errors import InvalidArgumentError, TrainingFailure
from backend.numerics.smooth import softmax_rows

logger = logging.getLogger("MOSAttack")


@dataclass
class TrainingConfig:
    """Model and data settings for ``train_toy``.

    ``hidden`` lists hidden widths; input and output widths come from the
    dataset fields ``d`` and ``n_classes``.
    """

    hidden: List[int] = field(default_factory=lambda: [16])
    seed: int = 7
    epochs: int = 60
    step_size: float = 0.5
    batch_size: int = 50
    adversarial: bool = False
    epsilon: float = 0.1
    pgd_steps: int = 10
    n_train: int = 1500
    n_eval: int = 500
    d: int = 2
    n_classes: int = 3
    data_seed: int = 7
    spread: float = 0.08

    @property
    def layer_dims(self) -> Tuple[int, ...]:
        return (self.d, *self.hidden, self.n_classes)

    def validate(self) -> "TrainingConfig":
        if self.epochs < 0:
            raise InvalidArgumentError(f"epochs must be >= 0, got {self.epochs}")
        if not self.step_size > 0:
            raise InvalidArgumentError(f"step_size must be positive, got {self.step_size}")
        if self.batch_size <= 0:
            raise InvalidArgumentError(f"batch_size must be positive, got {self.batch_size}")
        if any(h <= 0 for h in self.hidden):
            raise InvalidArgumentError(f"hidden widths must be positive, got {self.hidden}")
        if self.adversarial and (not self.epsilon > 0 or self.pgd_steps <= 0):
            raise InvalidArgumentError("adversarial training needs epsilon > 0 and pgd_steps > 0")
        return self

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainingConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(data) - set(known))
        if unknown:
            logger.warning(f"[MOSAttack] Ignoring unknown training keys: {unknown}")
        return cls(**known).validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _ce_grad(logits: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row cross entropy and its logits gradient."""
    p = softmax_rows(logits)
    rows = np.arange(labels.size)
    shifted = logits - logits.max(axis=1, keepdims=True)
    loss = np.log(np.exp(shifted).sum(axis=1)) - shifted[rows, labels]
    grad = p.copy()
    grad[rows, labels] -= 1.0
    return loss, grad


def pgd_perturb(
    w: ClassifierWeights,
    features: np.ndarray,
    labels: np.ndarray,
    epsilon: float,
    steps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Batched sign-gradient PGD on cross entropy inside the eps-box."""
    lower = np.maximum(features - epsilon, 0.0)
    upper = np.minimum(features + epsilon, 1.0)
    step = 2.5 * epsilon / steps
    x = np.clip(features + rng.uniform(-epsilon, epsilon, size=features.shape), lower, upper)
    for _ in range(steps):
        _, grad_x = forward_backward(w, x, lambda h: _ce_grad(h, labels)[1])
        x = np.clip(x + step * np.sign(grad_x), lower, upper)
    return x


def clean_accuracy(w: ClassifierWeights, dataset: Dataset) -> float:
    if len(dataset) == 0:
        return 0.0
    return float(np.mean(predict_batch(w, dataset.features) == dataset.labels))


def train_toy(
    cfg: TrainingConfig, dataset: Optional[Dataset] = None, adversarial: Optional[bool] = None
) -> ClassifierWeights:
    """Train the toy classifier with minibatch SGD on cross entropy.

    Args:
        cfg: Training configuration.
        dataset: Training data; generated from ``cfg`` when omitted.
        adversarial: Overrides ``cfg.adversarial``. When set, every step
            trains on PGD-perturbed inputs.

    Returns:
        Trained weights with a ``report`` holding the clean accuracy.

    Raises:
        InvalidArgumentError: On an empty dataset or bad config.
        TrainingFailure: If the loss becomes non-finite.
    """
    cfg.validate()
    adversarial = cfg.adversarial if adversarial is None else adversarial
    if dataset is None:
        dataset = make_blobs(cfg.n_train, cfg.d, cfg.n_classes, cfg.data_seed, cfg.spread)
    if len(dataset) == 0:
        raise InvalidArgumentError("training dataset is empty")
    if dataset.d != cfg.d or dataset.C != cfg.n_classes:
        cfg = TrainingConfig(**{**cfg.to_dict(), "d": dataset.d, "n_classes": dataset.C})

    w = init_weights(cfg.layer_dims, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    weights = [np.array(a) for a in w.weights]
    biases = [np.array(b) for b in w.biases]
    history: List[float] = []

    mode = "adversarial" if adversarial else "standard"
    logger.info(f"[MOSAttack] [train] {mode} training {cfg.layer_dims} for {cfg.epochs} epochs")

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        epoch_loss = 0.0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = dataset.features[idx]
            yb = dataset.labels[idx]
            current = ClassifierWeights(cfg.layer_dims, tuple(weights), tuple(biases))
            if adversarial:
                xb = pgd_perturb(current, xb, yb, cfg.epsilon, cfg.pgd_steps, rng)

            losses: List[np.ndarray] = []

            def grad_fn(logits: np.ndarray) -> np.ndarray:
                loss, grad = _ce_grad(logits, yb)
                losses.append(loss)
                return grad / yb.size

            _, grad_w, grad_b = parameter_gradients(current, xb, grad_fn)
            batch_loss = float(losses[0].mean())
            if not np.isfinite(batch_loss):
                raise TrainingFailure(f"non-finite loss in epoch {epoch}")
            epoch_loss += batch_loss * yb.size
            for i in range(len(weights)):
                weights[i] = weights[i] - cfg.step_size * grad_w[i]
                biases[i] = biases[i] - cfg.step_size * grad_b[i]

        history.append(epoch_loss / len(dataset))
        if not all(np.all(np.isfinite(a)) for a in weights + biases):
            raise TrainingFailure(f"parameters diverged in epoch {epoch}")
        logger.debug(f"[MOSAttack] [train] epoch {epoch}: loss {history[-1]:.4f}")

    trained = ClassifierWeights(cfg.layer_dims, tuple(weights), tuple(biases))
    accuracy = clean_accuracy(trained, dataset)
    logger.info(f"[MOSAttack] [train] clean training accuracy {accuracy:.4f}")
    return trained.with_report(
        {"clean_accuracy": accuracy, "adversarial": adversarial, "epochs": cfg.epochs, "loss_history": history}
    )
