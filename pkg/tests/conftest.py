import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure the app module can be imported
sys.path.append(str(Path(__file__).parent.parent))

from backend.classifier.dataset import LabeledPoint
from backend.classifier.network import ClassifierWeights, init_weights
from backend.harness.ledger import RunLedger


@pytest.fixture(autouse=True)
def isolated_ledger(tmp_path, monkeypatch):
    # Keep CLI runs from writing a ledger into the working directory
    monkeypatch.setenv("MOSATTACK_DB_URL", f"sqlite:///{tmp_path / 'runs.db'}")
    monkeypatch.delenv("MOSATTACK_WORKERS", raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    """Seeded 2-16-3 network."""
    return init_weights((2, 16, 3), seed=0)


@pytest.fixture
def golden_network():
    """Hand-built 2-16-3 network with dyadic weights and its recorded logits.

    Every intermediate value is exactly representable, so logits match bit for bit.
    """
    j = np.arange(16)
    even = j % 2 == 0
    w1 = np.column_stack([(j - 8) / 8.0, np.where(even, 0.5, -0.5)])
    b1 = np.where(even, -0.25, 0.125)
    w2 = np.vstack([np.ones(16), j / 4.0, np.where(j < 10, 0.5, -1.0)])
    b2 = np.array([0.5, -1.0, 0.25])
    model = ClassifierWeights((2, 16, 3), (w1, w2), (b1, b2))
    cases = [
        (np.array([0.25, 0.75]), np.array([1.4375, 1.65625, -0.40625])),
        (np.array([1.0, 0.0]), np.array([3.75, 9.625, -2.625])),
    ]
    return model, cases


@pytest.fixture
def toy_point():
    return LabeledPoint(np.array([0.5, 0.8]), 0)


@pytest.fixture
def ledger(tmp_path):
    return RunLedger(f"sqlite:///{tmp_path / 'ledger.db'}")


@pytest.fixture
def small_config(tmp_path):
    """A fast experiment config: small split, short training, short attacks."""
    return {
        "seed": 3,
        "dataset": {"seed": 7, "n_train": 300, "n_eval": 12, "d": 2, "n_classes": 3, "spread": 0.08},
        "model": {"hidden": [8], "epochs": 15, "adversarial": False},
        "attack": {"epsilon": 0.1, "n_iter": 8},
        "attacks": [],
        "output_dir": str(tmp_path / "out"),
    }
