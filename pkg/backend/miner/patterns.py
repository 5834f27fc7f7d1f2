"""Dominant-perturbation selection and loss-synergy pattern mining.

For one attacked point the K perturbations produce a loss matrix. After
per-row min-max normalization, a sparse indicator ``beta`` picks the few
"dominant" columns that still attain every loss's maximum; each dominant
column is then tagged with the losses it contributes to. Histograms of those
tags across a dataset show which losses tend to be maximized together.
"""

import itertools
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from backend.errors import InvalidArgumentError, MinerError
from backend.numerics.smooth import as_mat, log_sum_exp_rows, softmax_rows
from backend.objective.scalarization import DEFAULT_MU, LossMatrix

logger = logging.getLogger("MOSAttack")

EXHAUSTIVE_MAX_K = 12
CRITERIA = ("smooth", "hard")
MIN_SHARE_PERCENT = 1.0


@dataclass
class MinerConfig:
    """Miner settings; ``lam`` is the sparsity weight (``lambda`` in files)."""

    lam: float = 1.0
    T: float = 0.85
    C: float = 0.75
    mu: float = DEFAULT_MU
    steps: int = 500
    step_size: float = 0.1
    seed: int = 0
    polish: bool = True

    def validate(self) -> "MinerConfig":
        if self.lam < 0:
            raise InvalidArgumentError(f"lambda must be >= 0, got {self.lam}")
        if not 0 < self.T < 1 or not 0 < self.C < 1:
            raise InvalidArgumentError(f"T and C must be in (0, 1), got T={self.T}, C={self.C}")
        if not self.mu > 0:
            raise InvalidArgumentError(f"mu must be positive, got {self.mu}")
        if self.steps < 0 or not self.step_size > 0:
            raise InvalidArgumentError("steps must be >= 0 and step_size positive")
        return self

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MinerConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known).validate()

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out


@dataclass(frozen=True, eq=False)
class NormalizedLossMatrix:
    """m x K entries in [0, 1]; constant rows are all zeros."""

    values: np.ndarray
    losses: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        values = as_mat(self.values, "normalized loss matrix")
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


@dataclass
class PatternRecord:
    """Binary selection and, per selected column, the loss ids it contributes to."""

    beta: Tuple[int, ...]
    masks: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    losses: Tuple[int, ...] = ()
    label: Optional[str] = None

    def keys(self) -> List[str]:
        return [pattern_key(mask) for mask in self.masks.values() if mask]


def pattern_key(mask: Iterable[int]) -> str:
    """Render a loss-id set as "0+1+2"."""
    return "+".join(str(i) for i in sorted(mask))


def _fbar(Fbar) -> Tuple[np.ndarray, Tuple[int, ...]]:
    if isinstance(Fbar, NormalizedLossMatrix):
        return Fbar.values, Fbar.losses
    values = as_mat(Fbar, "normalized loss matrix")
    return values, tuple(range(values.shape[0]))


def normalize_losses(F) -> NormalizedLossMatrix:
    """Per-row min-max scaling to [0, 1]; constant rows map to zeros."""
    if isinstance(F, LossMatrix):
        values, losses = F.values, F.losses
    else:
        values = as_mat(F, "loss matrix")
        losses = tuple(range(values.shape[0]))
    lo = values.min(axis=1, keepdims=True)
    span = values.max(axis=1, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (values - lo) / safe, 0.0)
    return NormalizedLossMatrix(out, losses)


def relaxed_objective(Fbar, beta, cfg: MinerConfig) -> Tuple[float, np.ndarray]:
    """Smooth sparse-selection objective and its gradient in beta.

    value = sum_i [lse_mu(fbar_i) - lse_mu(beta * fbar_i)] + lam * sum(beta)

    where lse_mu(v) = mu * log(sum(exp(v / mu))). Minimized over [0, 1]^K.
    """
    values, _ = _fbar(Fbar)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (values.shape[1],):
        raise InvalidArgumentError(f"beta has shape {beta.shape}, expected ({values.shape[1]},)")
    scaled = values * beta
    gap = np.sum(log_sum_exp_rows(values, cfg.mu) - log_sum_exp_rows(scaled, cfg.mu))
    value = float(gap + cfg.lam * beta.sum())
    grad = cfg.lam - np.sum(softmax_rows(scaled, cfg.mu) * values, axis=0)
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise MinerError("relaxed objective is not finite")
    return value, grad


def hard_objective(Fbar, beta, cfg: MinerConfig) -> float:
    """Unsmoothed criterion at a binary beta: total max gap plus lam * |beta|_0."""
    values, _ = _fbar(Fbar)
    beta = np.asarray(beta, dtype=np.float64)
    gap = np.sum(values.max(axis=1) - (values * beta).max(axis=1))
    return float(gap + cfg.lam * np.count_nonzero(beta))


def _criterion(Fbar, beta: np.ndarray, cfg: MinerConfig, criterion: str) -> float:
    if criterion == "hard":
        return hard_objective(Fbar, beta, cfg)
    return relaxed_objective(Fbar, beta, cfg)[0]


def _improves(value: float, best: float) -> bool:
    return value < best - 1e-12 * max(1.0, abs(best))


def _polish(Fbar, beta: np.ndarray, cfg: MinerConfig) -> np.ndarray:
    """Single-flip descent at binary points until no flip improves."""
    best_val = _criterion(Fbar, beta, cfg, "smooth")
    while True:
        best_flip = None
        for k in range(beta.size):
            trial = beta.copy()
            trial[k] = 1.0 - trial[k]
            val = _criterion(Fbar, trial, cfg, "smooth")
            if _improves(val, best_val):
                best_val, best_flip = val, k
        if best_flip is None:
            return beta
        beta[best_flip] = 1.0 - beta[best_flip]


def mine_dominant(Fbar, cfg: MinerConfig) -> np.ndarray:
    """Projected gradient descent on the relaxed objective, then threshold at T.

    The start is all-ones minus a tiny offset that increases with the column
    index (plus seeded jitter below the offset spacing), so exactly
    symmetric columns resolve toward the lower index.

    Returns:
        Binary int vector of length K.

    Raises:
        MinerError: If the objective turns non-finite.
    """
    cfg.validate()
    values, _ = _fbar(Fbar)
    K = values.shape[1]
    rng = np.random.default_rng(cfg.seed)
    spacing = 1e-3 / K
    beta = 1.0 - spacing * np.arange(K) - rng.uniform(0.0, 0.1 * spacing, size=K)

    for _ in range(cfg.steps):
        _, grad = relaxed_objective(values, beta, cfg)
        beta = np.clip(beta - cfg.step_size * grad, 0.0, 1.0)

    binary = (beta >= cfg.T).astype(np.float64)
    if cfg.polish:
        binary = _polish(values, binary, cfg)
    logger.debug(f"[MOSAttack] [miner] relaxed beta {np.round(beta, 3).tolist()} -> {binary.astype(int).tolist()}")
    return binary.astype(np.int64)


def exhaustive_dominant(Fbar, cfg: MinerConfig, criterion: str = "smooth") -> np.ndarray:
    """Minimize the criterion over all 2^K binary vectors (K <= 12).

    Vectors are visited with 1 before 0 in each position, so ties resolve
    toward selecting lower indices.
    """
    if criterion not in CRITERIA:
        raise InvalidArgumentError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    values, _ = _fbar(Fbar)
    K = values.shape[1]
    if K > EXHAUSTIVE_MAX_K:
        raise InvalidArgumentError(f"exhaustive search supports K <= {EXHAUSTIVE_MAX_K}, got {K}")
    best_beta = None
    best_val = np.inf
    for bits in itertools.product((1.0, 0.0), repeat=K):
        beta = np.array(bits)
        val = _criterion(values, beta, cfg, criterion)
        if best_beta is None or _improves(val, best_val):
            best_beta, best_val = beta, val
    return best_beta.astype(np.int64)


def extract_patterns(Fbar, beta, cfg: MinerConfig, label: Optional[str] = None) -> PatternRecord:
    """Tag each selected column with the losses it nearly maximizes.

    Loss i joins column k's mask when Fbar[i, k] > C * max_k' Fbar[i, k'].
    Rows whose maximum is 0 join no mask. A selected column may end with an
    empty mask; aggregation skips those.
    """
    values, losses = _fbar(Fbar)
    beta = np.asarray(beta, dtype=np.int64)
    if beta.shape != (values.shape[1],):
        raise InvalidArgumentError(f"beta has shape {beta.shape}, expected ({values.shape[1]},)")
    row_max = values.max(axis=1)
    live = row_max > 0
    masks = {}
    for k in np.flatnonzero(beta):
        hits = live & (values[:, k] > cfg.C * row_max)
        masks[int(k)] = tuple(losses[i] for i in np.flatnonzero(hits))
    return PatternRecord(beta=tuple(int(b) for b in beta), masks=masks, losses=losses, label=label)


def mine_point(F, cfg: MinerConfig, label: Optional[str] = None) -> PatternRecord:
    """Normalize, select dominant columns and extract masks for one point."""
    fbar = normalize_losses(F)
    return extract_patterns(fbar, mine_dominant(fbar, cfg), cfg, label)


@dataclass
class PatternHistogram:
    """Counts and percentages of pattern keys.

    ``filtered`` keeps keys with at least 1% share. ``without_all`` repeats
    the percentages with the all-losses pattern removed.
    """

    counts: Dict[str, int]
    percent: Dict[str, float]
    filtered: Dict[str, float]
    all_losses_key: str
    all_losses_share: float
    without_all: Dict[str, float]
    total: int
    groups: Dict[str, "PatternHistogram"] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out = {k: v for k, v in asdict(self).items() if k != "groups"}
        out["groups"] = {name: hist.to_dict() for name, hist in self.groups.items()}
        return out


def _percentages(counts: Counter) -> Dict[str, float]:
    total = sum(counts.values())
    if total == 0:
        return {}
    return {key: 100.0 * n / total for key, n in counts.most_common()}


def _histogram(records: Sequence[PatternRecord]) -> PatternHistogram:
    counts: Counter = Counter()
    all_key = ""
    for rec in records:
        counts.update(rec.keys())
        if rec.losses:
            all_key = pattern_key(rec.losses)
    percent = _percentages(counts)
    without = Counter({k: n for k, n in counts.items() if k != all_key})
    return PatternHistogram(
        counts=dict(counts.most_common()),
        percent=percent,
        filtered={k: v for k, v in percent.items() if v >= MIN_SHARE_PERCENT},
        all_losses_key=all_key,
        all_losses_share=percent.get(all_key, 0.0),
        without_all=_percentages(without),
        total=int(sum(counts.values())),
    )


def aggregate_patterns(records: Sequence[PatternRecord], by_label: bool = False) -> PatternHistogram:
    """Histogram of masks over every dominant example of every record.

    With ``by_label`` the result also carries one histogram per record label.
    """
    hist = _histogram(records)
    if by_label:
        labels = sorted({rec.label for rec in records if rec.label is not None})
        hist.groups = {name: _histogram([r for r in records if r.label == name]) for name in labels}
    logger.info(f"[MOSAttack] [miner] aggregated {hist.total} dominant examples into {len(hist.counts)} patterns")
    return hist
