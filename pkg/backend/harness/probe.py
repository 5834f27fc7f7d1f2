"""Timing probe: one set-objective gradient vs K single-loss gradients."""

import logging
import statistics
import time
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from backend.classifier.network import ClassifierWeights
from backend.classifier.training import TrainingConfig, train_toy
from backend.errors import InvalidArgumentError
from backend.losses.surrogates import parse_losses
from backend.objective.scalarization import DEFAULT_MU, grad_objective_at, single_loss_grad_at

logger = logging.getLogger("MOSAttack")

PROBE_INPUT_DIM = 64
PROBE_EPOCHS = 10
DEFAULT_REPEATS = 5
DEFAULT_INNER = 20


@dataclass
class ProbeRow:
    K: int
    m: int
    mos_seconds: float
    single_seconds: float
    ratio: float


def probe_config(seed: int = 0) -> TrainingConfig:
    """The d=64 toy setup: default hidden layer and classes, standard training."""
    return TrainingConfig(d=PROBE_INPUT_DIM, seed=seed, epochs=PROBE_EPOCHS, adversarial=False)


@lru_cache(maxsize=4)
def probe_model(seed: int = 0) -> ClassifierWeights:
    """Seeded d=64 toy model used when no weights are given."""
    return train_toy(probe_config(seed))


def _interleaved_medians(
    first: Callable[[], None], second: Callable[[], None], repeats: int, inner: int
) -> Tuple[float, float]:
    """Median per-call time of two functions, timed in alternation."""
    times: Tuple[List[float], List[float]] = ([], [])
    for _ in range(repeats):
        for fn, bucket in zip((first, second), times):
            start = time.perf_counter()
            for _ in range(inner):
                fn()
            bucket.append((time.perf_counter() - start) / inner)
    return statistics.median(times[0]), statistics.median(times[1])


def gradient_cost_probe(
    model: Optional[ClassifierWeights] = None,
    K_values: Sequence[int] = (1, 4, 8),
    losses=(0,),
    mu: float = DEFAULT_MU,
    repeats: int = DEFAULT_REPEATS,
    inner: int = DEFAULT_INNER,
    seed: int = 0,
) -> List[ProbeRow]:
    """Time one set-objective gradient at set size K against K single-loss gradients.

    The baseline uses the first listed loss, one input per call. Times are
    medians over ``repeats`` of a loop of ``inner`` calls. The model is only
    read.
    """
    ids = parse_losses(losses)
    if repeats < 1 or inner < 1:
        raise InvalidArgumentError("repeats and inner must be >= 1")
    if any(K < 1 for K in K_values):
        raise InvalidArgumentError(f"K values must be >= 1, got {list(K_values)}")
    model = model or probe_model(seed)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=model.input_dim)
    y = 0
    rows = []
    for K in K_values:
        X = np.clip(x + rng.uniform(-0.05, 0.05, size=(K, model.input_dim)), 0.0, 1.0)
        singles = [X[k : k + 1] for k in range(K)]

        def mos_step() -> None:
            grad_objective_at(model, X, y, ids, mu)

        def single_steps() -> None:
            for row in singles:
                single_loss_grad_at(model, row, y, ids[0])

        mos_t, single_t = _interleaved_medians(mos_step, single_steps, repeats, inner)
        rows.append(ProbeRow(K, len(ids), mos_t, single_t, mos_t / single_t))
        logger.info(f"[MOSAttack] [probe] K={K} m={len(ids)}: ratio {mos_t / single_t:.3f}")
    return rows


def probe_frame(rows: Sequence[ProbeRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows])
