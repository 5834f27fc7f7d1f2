"""Small fully-connected ReLU classifier with analytic forward/backward passes.

Dense layers, rectified-linear hidden activations and a linear output layer.
Weights are immutable once built; ``forward``/``backward_input`` may be called
from many threads at once.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from backend.errors import InvalidArgumentError, NumericError

logger = logging.getLogger("MOSAttack")

ACTIVATION_RELU = "relu"


@dataclass(frozen=True, eq=False)
class ClassifierWeights:
    """Parameters of the classifier.

    Attributes:
        layer_dims: (d, hidden..., C).
        weights: One (out, in) matrix per layer.
        biases: One length-out vector per layer.
        activations: Activation tag per hidden layer.
        report: Optional training summary; never serialized.
    """

    layer_dims: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activations: Tuple[str, ...] = ()
    report: Optional[Dict[str, Any]] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        dims = tuple(int(v) for v in self.layer_dims)
        if len(dims) < 2 or any(v <= 0 for v in dims):
            raise InvalidArgumentError(f"layer_dims must hold at least two positive counts, got {dims}")
        if dims[-1] < 2:
            raise InvalidArgumentError(f"output width must be at least 2, got {dims[-1]}")
        n_layers = len(dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise InvalidArgumentError(
                f"expected {n_layers} weight/bias pairs, got {len(self.weights)}/{len(self.biases)}"
            )

        weights = []
        biases = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise InvalidArgumentError(
                    f"layer {i} has shapes {w.shape}/{b.shape}, expected "
                    f"{(dims[i + 1], dims[i])}/{(dims[i + 1],)}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f"layer {i} holds non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            weights.append(w)
            biases.append(b)

        activations = tuple(self.activations) or (ACTIVATION_RELU,) * (n_layers - 1)
        if len(activations) != n_layers - 1 or any(a != ACTIVATION_RELU for a in activations):
            raise InvalidArgumentError(f"unsupported activations {activations}")

        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "biases", tuple(biases))
        object.__setattr__(self, "activations", activations)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def with_report(self, report: Dict[str, Any]) -> "ClassifierWeights":
        return ClassifierWeights(self.layer_dims, self.weights, self.biases, self.activations, report)

    def same_parameters(self, other: "ClassifierWeights") -> bool:
        """Bit-exact parameter equality."""
        if self.layer_dims != other.layer_dims:
            return False
        pairs = zip(self.weights + self.biases, other.weights + other.biases)
        return all(a.tobytes() == b.tobytes() for a, b in pairs)


def init_weights(layer_dims: Sequence[int], seed: int) -> ClassifierWeights:
    """He-uniform initialization with zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    dims = [int(v) for v in layer_dims]
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ClassifierWeights(tuple(dims), tuple(weights), tuple(biases))


def zero_weights(layer_dims: Sequence[int]) -> ClassifierWeights:
    dims = [int(v) for v in layer_dims]
    return ClassifierWeights(
        tuple(dims),
        tuple(np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])),
        tuple(np.zeros(o) for o in dims[1:]),
    )


def _as_inputs(w: ClassifierWeights, x) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr.reshape(1, -1) if single else arr
    if batch.ndim != 2 or batch.shape[1] != w.input_dim:
        raise InvalidArgumentError(
            f"input has shape {arr.shape}, expected ({w.input_dim},) or (n, {w.input_dim})"
        )
    return batch, single


def _forward_cache(w: ClassifierWeights, batch: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Forward pass keeping layer inputs and hidden pre-activations."""
    inputs = []
    pre_activations = []
    a = batch
    last = len(w.weights) - 1
    for i, (weight, bias) in enumerate(zip(w.weights, w.biases)):
        inputs.append(a)
        z = a @ weight.T + bias
        if i < last:
            pre_activations.append(z)
            a = np.maximum(z, 0.0)
        else:
            a = z
    return a, inputs, pre_activations


def forward(w: ClassifierWeights, x) -> np.ndarray:
    """Logits for one input (shape (d,)) or a batch (shape (n, d)).

    Raises:
        InvalidArgumentError: On a dimension mismatch.
    """
    batch, single = _as_inputs(w, x)
    logits, _, _ = _forward_cache(w, batch)
    return logits[0] if single else logits


def _backward(
    w: ClassifierWeights,
    inputs: List[np.ndarray],
    pre_activations: List[np.ndarray],
    grad_logits: np.ndarray,
    need_params: bool = False,
) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    g = grad_logits
    grad_w: List[np.ndarray] = [None] * len(w.weights)  # type: ignore[list-item]
    grad_b: List[np.ndarray] = [None] * len(w.weights)  # type: ignore[list-item]
    for i in range(len(w.weights) - 1, -1, -1):
        if need_params:
            grad_w[i] = g.T @ inputs[i]
            grad_b[i] = g.sum(axis=0)
        g = g @ w.weights[i]
        if i > 0:
            # ReLU subgradient at 0 is 0
            g = g * (pre_activations[i - 1] > 0.0)
    return g, grad_w, grad_b


def backward_input(w: ClassifierWeights, x, grad_logits) -> np.ndarray:
    """Vector-Jacobian product ``(dh/dx)^T grad_logits`` by reverse accumulation.

    Accepts a single input with a length-C gradient, or a batch (n, d) with
    an (n, C) gradient; each row is handled independently.
    """
    batch, single = _as_inputs(w, x)
    g = np.asarray(grad_logits, dtype=np.float64)
    g = g.reshape(1, -1) if g.ndim == 1 else g
    if g.shape != (batch.shape[0], w.n_classes):
        raise InvalidArgumentError(
            f"grad_logits has shape {np.shape(grad_logits)}, expected length {w.n_classes} per input"
        )
    _, inputs, pre_activations = _forward_cache(w, batch)
    grad_x, _, _ = _backward(w, inputs, pre_activations, g)
    return grad_x[0] if single else grad_x


def forward_backward(w: ClassifierWeights, batch: np.ndarray, grad_fn) -> Tuple[np.ndarray, np.ndarray]:
    """One forward pass, a caller-supplied logits gradient, one backward pass.

    Args:
        w: Weights.
        batch: (n, d) inputs.
        grad_fn: Maps the (n, C) logits to an (n, C) gradient.

    Returns:
        (logits, input gradient), both batched.
    """
    logits, inputs, pre_activations = _forward_cache(w, batch)
    grad_x, _, _ = _backward(w, inputs, pre_activations, grad_fn(logits))
    return logits, grad_x


def parameter_gradients(
    w: ClassifierWeights, batch: np.ndarray, grad_fn
) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Gradients of a batch objective w.r.t. every weight and bias."""
    logits, inputs, pre_activations = _forward_cache(w, batch)
    _, grad_w, grad_b = _backward(w, inputs, pre_activations, grad_fn(logits), need_params=True)
    return logits, grad_w, grad_b


def predict(w: ClassifierWeights, x) -> int:
    """Argmax class; ties go to the lowest index."""
    return int(np.argmax(forward(w, x)))


def predict_batch(w: ClassifierWeights, batch) -> np.ndarray:
    return np.argmax(forward(w, np.atleast_2d(batch)), axis=1)
