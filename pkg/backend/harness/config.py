"""Experiment configuration: documented defaults merged with a JSON file."""

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from backend.attack.apgd import AttackConfig
from backend.classifier.training import TrainingConfig
from backend.errors import ConfigError, InvalidArgumentError
from backend.losses.surrogates import parse_losses, preset_name, short_name
from backend.miner.patterns import MinerConfig
from backend.utils import load_config

logger = logging.getLogger("MOSAttack")

ATTACK_KINDS = ("mos", "apgd", "ensemble", "upper-bound")

DEFAULT_CONFIG: Dict[str, Any] = {
    "seed": 0,
    "dataset": {"seed": 7, "n_train": 1500, "n_eval": 500, "d": 2, "n_classes": 3, "spread": 0.08},
    "model": {
        "hidden": [16],
        "seed": 7,
        "epochs": 60,
        "step_size": 0.5,
        "batch_size": 50,
        "adversarial": True,
        "epsilon": 0.1,
        "pgd_steps": 10,
        "weights_path": None,
    },
    "attack": {
        "epsilon": 0.1,
        "eta0": None,
        "n_iter": 50,
        "alpha": 0.75,
        "rho": 0.75,
        "mu": 1.0,
        "early_stop": False,
        "step_rule": "gradient",
    },
    "attacks": [],
    "miner": {"lambda": 1.0, "T": 0.85, "C": 0.75, "mu": None, "steps": 500, "step_size": 0.1, "polish": True},
    "output_dir": "results",
    "write_traces": True,
}


@dataclass
class AttackSpec:
    """One row of the attack grid.

    kind:
        ``mos``: set attack over ``losses`` with set size ``K``.
        ``apgd``: one single-loss row per entry of ``losses``.
        ``ensemble``: union of single-loss attacks over ``losses``.
        ``upper-bound``: like ``ensemble`` with ``restarts`` (default 5),
        optionally unioned with every MOS row (``include_mos``).
    """

    kind: str
    losses: Tuple[int, ...]
    K: int = 1
    restarts: int = 1
    include_mos: bool = False
    name: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttackSpec":
        kind = data.get("kind", "mos")
        if kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {kind!r}; expected one of {ATTACK_KINDS}")
        default_restarts = 5 if kind == "upper-bound" else 1
        try:
            losses = tuple(int(i) for i in parse_losses(data.get("losses", "MOS-8")))
        except InvalidArgumentError as e:
            raise ConfigError(str(e)) from e
        spec = cls(
            kind=kind,
            losses=losses,
            K=int(data.get("K", 1)),
            restarts=int(data.get("restarts", default_restarts)),
            include_mos=bool(data.get("include_mos", False)),
            name=data.get("name"),
        )
        if spec.K < 1 or spec.restarts < 1:
            raise ConfigError(f"K and restarts must be >= 1 in {data}")
        return spec

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "losses": list(self.losses),
            "K": self.K,
            "restarts": self.restarts,
            "include_mos": self.include_mos,
            "name": self.name,
        }

    def expand(self) -> List["AttackSpec"]:
        """Split an ``apgd`` spec with several losses into one spec per loss."""
        if self.kind == "apgd" and len(self.losses) > 1:
            return [AttackSpec("apgd", (loss,), 1, self.restarts) for loss in self.losses]
        return [self]

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "mos":
            return f"{preset_name(self.losses)}({self.K})"
        if self.kind == "apgd":
            return f"APGD-{short_name(self.losses[0])}({self.restarts})"
        if self.kind == "ensemble":
            return f"APGD-All({self.restarts})"
        return "Upper Bound"

    @property
    def size(self) -> int:
        """K for set attacks, restarts otherwise."""
        return self.K if self.kind == "mos" else self.restarts


@dataclass
class ExperimentConfig:
    seed: int
    training: TrainingConfig
    weights_path: Optional[str]
    attack: AttackConfig
    attacks: List[AttackSpec]
    miner: MinerConfig
    output_dir: Path
    write_traces: bool = True
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        merged = _merge(DEFAULT_CONFIG, data)
        try:
            dataset = merged["dataset"]
            model = dict(merged["model"])
            weights_path = model.pop("weights_path", None)
            training = TrainingConfig.from_dict(
                {
                    **model,
                    "n_train": dataset["n_train"],
                    "n_eval": dataset["n_eval"],
                    "d": dataset["d"],
                    "n_classes": dataset["n_classes"],
                    "data_seed": dataset["seed"],
                    "spread": dataset["spread"],
                }
            )
            attack = AttackConfig.from_dict({**merged["attack"], "seed": merged["seed"]})
            miner_dict = dict(merged["miner"])
            if miner_dict.get("mu") is None:
                miner_dict["mu"] = attack.mu
            miner = MinerConfig.from_dict(miner_dict)
            attacks: List[AttackSpec] = []
            for entry in merged["attacks"]:
                attacks.extend(AttackSpec.from_dict(entry).expand())
            labels = [spec.label for spec in attacks]
            duplicates = sorted({name for name in labels if labels.count(name) > 1})
            if duplicates:
                raise ConfigError(f"attack rows must have distinct names, repeated: {duplicates}")
        except ConfigError:
            raise
        except (InvalidArgumentError, TypeError, KeyError) as e:
            raise ConfigError(f"Invalid experiment config: {e}") from e

        return cls(
            seed=int(merged["seed"]),
            training=training,
            weights_path=weights_path,
            attack=attack,
            attacks=attacks,
            miner=miner,
            output_dir=Path(merged["output_dir"]),
            write_traces=bool(merged["write_traces"]),
            raw=merged,
        )

    def to_dict(self) -> Dict[str, Any]:
        out = copy.deepcopy(self.raw)
        out["attacks"] = [spec.to_dict() for spec in self.attacks]
        out["output_dir"] = str(self.output_dir)
        return out


def _merge(defaults: Dict[str, Any], data: Dict[str, Any]) -> Dict[str, Any]:
    """One-level-deep merge: nested dict sections are merged key by key."""
    merged = copy.deepcopy(defaults)
    for key, value in data.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def load_experiment_config(path: Optional[Union[str, Path]], overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Read a JSON experiment config and merge it over DEFAULT_CONFIG."""
    data = load_config(path, {})
    if overrides:
        data = _merge(data, overrides)
    return ExperimentConfig.from_dict(data)
