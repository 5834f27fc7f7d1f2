"""Synthetic labeled data in the unit box, plus CSV persistence."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from backend.errors import InvalidArgumentError

logger = logging.getLogger("MOSAttack")

DATASET_FORMAT_VERSION = 1
_HEADER_PREFIX = "# mosattack-dataset"
LABEL_COLUMN = "label"


@dataclass(frozen=True, eq=False)
class LabeledPoint:
    """One input in [0,1]^d with its class index."""

    x: np.ndarray
    y: int

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise InvalidArgumentError(f"feature vector must be 1-D and non-empty, got shape {x.shape}")
        if not np.all((x >= 0.0) & (x <= 1.0)):
            raise InvalidArgumentError("features must lie in [0, 1]")
        if int(self.y) < 0:
            raise InvalidArgumentError(f"label must be non-negative, got {self.y}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", int(self.y))

    @property
    def d(self) -> int:
        return int(self.x.size)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix (n, d) and label vector (n,) with class count C."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise InvalidArgumentError(
                f"features {features.shape} and labels {labels.shape} do not describe one sample per row"
            )
        if not np.all((features >= 0.0) & (features <= 1.0)):
            raise InvalidArgumentError("features must lie in [0, 1]")
        if self.n_classes < 2:
            raise InvalidArgumentError(f"need at least 2 classes, got {self.n_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise InvalidArgumentError(f"labels must be in [0, {self.n_classes})")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def C(self) -> int:
        return self.n_classes

    def __len__(self) -> int:
        return int(self.labels.size)

    def __getitem__(self, index: int) -> LabeledPoint:
        return LabeledPoint(self.features[index], int(self.labels[index]))

    @property
    def points(self) -> List[LabeledPoint]:
        return [self[i] for i in range(len(self))]

    def __iter__(self) -> Iterator[LabeledPoint]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


def make_blobs(n: int, d: int = 2, n_classes: int = 3, seed: int = 0, spread: float = 0.08) -> Dataset:
    """Gaussian blobs clipped to the unit box.

    In two dimensions the class centers sit evenly on a circle of radius 0.3
    around (0.5, 0.5); in higher dimensions they are drawn uniformly from
    [0.25, 0.75]^d. Labels are balanced and shuffled.
    """
    if n <= 0 or d <= 0:
        raise InvalidArgumentError(f"n and d must be positive, got n={n}, d={d}")
    if n_classes < 2:
        raise InvalidArgumentError(f"need at least 2 classes, got {n_classes}")
    rng = np.random.default_rng(seed)

    if d == 2:
        angles = np.pi / 2 + 2 * np.pi * np.arange(n_classes) / n_classes
        centers = 0.5 + 0.3 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    else:
        centers = rng.uniform(0.25, 0.75, size=(n_classes, d))

    labels = rng.permutation(np.arange(n) % n_classes)
    features = centers[labels] + rng.normal(0.0, spread, size=(n, d))
    return Dataset(np.clip(features, 0.0, 1.0), labels, n_classes)


def train_eval_split(
    n_train: int, n_eval: int, d: int = 2, n_classes: int = 3, seed: int = 0, spread: float = 0.08
) -> Tuple[Dataset, Dataset]:
    """Draw one blob sample of n_train + n_eval points and split it."""
    full = make_blobs(n_train + n_eval, d, n_classes, seed, spread)
    return full.subset(range(n_train)), full.subset(range(n_train, n_train + n_eval))


def save_dataset(path: Union[str, Path], dataset: Dataset) -> Path:
    """Write a dataset CSV: a version comment line, then x0..x{d-1} and label."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(dataset.features, columns=[f"x{j}" for j in range(dataset.d)])
    frame[LABEL_COLUMN] = dataset.labels
    with open(path, "w", newline="") as f:
        f.write(f"{_HEADER_PREFIX} v{DATASET_FORMAT_VERSION} d={dataset.d} C={dataset.C}\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    return path


def load_dataset(path: Union[str, Path], n_classes: Optional[int] = None) -> Dataset:
    """Read a dataset CSV written by ``save_dataset``.

    Raises:
        InvalidArgumentError: If the version header or columns are wrong.
    """
    path = Path(path)
    with open(path) as f:
        header = f.readline().strip()
    parts = header.split()
    if not header.startswith(_HEADER_PREFIX) or len(parts) < 3:
        raise InvalidArgumentError(f"{path.name} is missing the dataset version header")
    if parts[2] != f"v{DATASET_FORMAT_VERSION}":
        raise InvalidArgumentError(f"{path.name} has unsupported dataset version {parts[2]}")

    declared = {k: int(v) for k, v in (p.split("=", 1) for p in parts[3:] if "=" in p)}
    frame = pd.read_csv(path, comment="#")
    if LABEL_COLUMN not in frame.columns:
        raise InvalidArgumentError(f"{path.name} has no '{LABEL_COLUMN}' column")

    feature_cols = [c for c in frame.columns if c != LABEL_COLUMN]
    if "d" in declared and declared["d"] != len(feature_cols):
        raise InvalidArgumentError(f"{path.name} declares d={declared['d']} but has {len(feature_cols)} feature columns")
    classes = n_classes or declared.get("C") or int(frame[LABEL_COLUMN].max()) + 1
    logger.debug(f"[MOSAttack] Loaded {len(frame)} points from {path.name}")
    return Dataset(frame[feature_cols].to_numpy(dtype=np.float64), frame[LABEL_COLUMN].to_numpy(), classes)
