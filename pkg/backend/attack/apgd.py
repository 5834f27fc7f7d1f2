"""Momentum projected-gradient attack with checkpointed step-size halving.

``mos_attack`` ascends the set objective over K perturbations at once;
``apgd_single`` runs the same loop on one loss with a single perturbation.
Both share ``_run``; the K=1, one-loss case follows exactly the same
arithmetic.
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from backend.classifier.dataset import LabeledPoint
from backend.classifier.network import ClassifierWeights
from backend.errors import InvalidArgumentError, NumericError
from backend.losses.surrogates import ALL_LOSSES, LossId, parse_losses, to_loss_id
from backend.objective.scalarization import (
    DEFAULT_MU,
    SetGradient,
    grad_objective_at,
    loss_matrix_at,
    single_loss_grad_at,
)
from backend.utils import derive_seed, sanitize_error

logger = logging.getLogger("MOSAttack")

STEP_RULES = ("gradient", "sign")
TRACE_FORMAT_VERSION = 1
TRACE_COLUMNS = ["iteration", "g", "g_max", "eta", "success"]


@dataclass
class AttackConfig:
    """Settings for one attack run.

    ``eta0`` of None means 2 * epsilon. ``restarts`` is used by
    ``attack_with_restarts``; a single call to ``mos_attack`` is one start.
    """

    epsilon: float = 0.1
    eta0: Optional[float] = None
    n_iter: int = 50
    alpha: float = 0.75
    rho: float = 0.75
    mu: float = DEFAULT_MU
    losses: Tuple[int, ...] = tuple(int(i) for i in ALL_LOSSES)
    K: int = 1
    seed: int = 0
    early_stop: bool = False
    restarts: int = 1
    step_rule: str = "gradient"
    record_iterates: bool = False

    def __post_init__(self) -> None:
        self.losses = tuple(int(i) for i in parse_losses(self.losses))

    @property
    def step_size(self) -> float:
        return 2.0 * self.epsilon if self.eta0 is None else float(self.eta0)

    def validate(self) -> "AttackConfig":
        if not (self.epsilon >= 0 and np.isfinite(self.epsilon)):
            raise InvalidArgumentError(f"epsilon must be a finite number >= 0, got {self.epsilon}")
        if self.eta0 is not None and not self.eta0 > 0:
            raise InvalidArgumentError(f"eta0 must be positive, got {self.eta0}")
        if self.n_iter < 1:
            raise InvalidArgumentError(f"n_iter must be >= 1, got {self.n_iter}")
        if not 0 < self.alpha <= 1:
            raise InvalidArgumentError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0 < self.rho < 1:
            raise InvalidArgumentError(f"rho must be in (0, 1), got {self.rho}")
        if not self.mu > 0:
            raise InvalidArgumentError(f"mu must be positive, got {self.mu}")
        if self.K < 1:
            raise InvalidArgumentError(f"K must be >= 1, got {self.K}")
        if self.restarts < 1:
            raise InvalidArgumentError(f"restarts must be >= 1, got {self.restarts}")
        if self.step_rule not in STEP_RULES:
            raise InvalidArgumentError(f"step_rule must be one of {STEP_RULES}, got {self.step_rule!r}")
        return self

    def replace(self, **changes: Any) -> "AttackConfig":
        return AttackConfig(**{**asdict(self), **changes}).validate()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AttackConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known).validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class AttackState:
    """Mutable loop state; X rows are always feasible."""

    X: np.ndarray
    X_prev: np.ndarray
    g: float
    grad: np.ndarray
    g_max: float
    X_max: np.ndarray
    grad_max: np.ndarray
    eta: float
    success_count_since_checkpoint: int = 0
    eta_at_checkpoint: float = 0.0
    gmax_at_checkpoint: float = 0.0
    first_success: Optional[Tuple[int, int]] = None


@dataclass
class TraceRow:
    iteration: int
    g: float
    g_max: float
    eta: float
    success: bool


@dataclass
class AttackOutcome:
    """Result of one attack run.

    Attributes:
        final_delta: Last iterate minus x, shape (K, d).
        best_delta: X_max minus x.
        success: Whether any set member was misclassified at any iteration.
        success_index / success_iteration: First misclassifying member.
        adversarial: That member's input, if any.
        trace: Objective, best objective and step size per iteration.
        final_losses: Per-loss maximum over the set at the final iterate.
        final_matrix: Loss matrix at the final iterate.
        halvings: Iterations at which the step size was halved.
        restart_iterates: Iterate right after each halving restart.
        failed / failure_iteration / message: Numeric failure details.
    """

    final_delta: np.ndarray
    best_delta: np.ndarray
    success: bool
    success_index: Optional[int] = None
    success_iteration: Optional[int] = None
    adversarial: Optional[np.ndarray] = None
    trace: List[TraceRow] = field(default_factory=list)
    final_losses: Dict[int, float] = field(default_factory=dict)
    final_matrix: Optional[np.ndarray] = None
    halvings: List[int] = field(default_factory=list)
    restart_iterates: Dict[int, np.ndarray] = field(default_factory=dict)
    iterates: List[np.ndarray] = field(default_factory=list)
    iterations_run: int = 0
    failed: bool = False
    failure_iteration: Optional[int] = None
    message: str = ""
    restart: int = 0
    seed: int = 0

    @property
    def g_max(self) -> float:
        return self.trace[-1].g_max if self.trace else float("nan")


def project_set(X, x, epsilon: float) -> np.ndarray:
    """Clamp each row into [max(0, x - eps), min(1, x + eps)] coordinatewise."""
    x = np.asarray(x, dtype=np.float64)
    lower = np.maximum(x - epsilon, 0.0)
    upper = np.minimum(x + epsilon, 1.0)
    return np.clip(np.asarray(X, dtype=np.float64), lower, upper)


def checkpoint_schedule(n_iter: int) -> List[int]:
    """Checkpoint iterations ``w_j = ceil(p_j * n_iter)``.

    p_0 = 0, p_1 = 0.22 and p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06),
    truncated at n_iter. Fractions are kept in integer percent so the
    ceiling is exact.
    """
    if n_iter < 1:
        raise InvalidArgumentError(f"n_iter must be >= 1, got {n_iter}")
    points = [0]
    prev, pct = 0, 22
    while True:
        w = -(-pct * n_iter // 100)
        if w >= n_iter:
            points.append(n_iter)
            return points
        if w > points[-1]:
            points.append(w)
        prev, pct = pct, pct + max(pct - prev - 3, 6)


Evaluator = Callable[[np.ndarray], SetGradient]


def _run(
    model: ClassifierWeights,
    point: LabeledPoint,
    cfg: AttackConfig,
    evaluate: Evaluator,
    report_losses: Sequence[LossId],
    K: int,
    init_deltas: Optional[np.ndarray] = None,
) -> AttackOutcome:
    cfg.validate()
    x, y = point.x, point.y
    d = x.size
    eps = cfg.epsilon

    if init_deltas is None:
        rng = np.random.default_rng(cfg.seed)
        init_deltas = rng.uniform(-eps, eps, size=(K, d))
    else:
        init_deltas = np.asarray(init_deltas, dtype=np.float64)
        if init_deltas.shape != (K, d):
            raise InvalidArgumentError(f"initial perturbations have shape {init_deltas.shape}, expected {(K, d)}")

    def step(X: np.ndarray, grad: np.ndarray, eta: float) -> np.ndarray:
        direction = np.sign(grad) if cfg.step_rule == "sign" else grad
        return project_set(X + eta * direction, x, eps)

    outcome = AttackOutcome(final_delta=np.zeros((K, d)), best_delta=np.zeros((K, d)), success=False, seed=cfg.seed)
    state: Optional[AttackState] = None

    def record(t: int, X: np.ndarray, result: SetGradient) -> None:
        preds = np.argmax(result.logits, axis=1)
        wrong = np.flatnonzero(preds != y)
        if wrong.size and state.first_success is None:
            state.first_success = (t, int(wrong[0]))
            outcome.success = True
            outcome.success_iteration = t
            outcome.success_index = int(wrong[0])
            outcome.adversarial = X[wrong[0]].copy()
        outcome.trace.append(TraceRow(t, float(result.value), float(state.g_max), float(state.eta), outcome.success))
        if cfg.record_iterates:
            outcome.iterates.append(X.copy())
        outcome.iterations_run = t

    t = 0
    try:
        X0 = project_set(x + init_deltas, x, eps)
        res0 = evaluate(X0)
        state = AttackState(
            X=X0,
            X_prev=X0,
            g=res0.value,
            grad=res0.grads,
            g_max=res0.value,
            X_max=X0,
            grad_max=res0.grads,
            eta=cfg.step_size,
            eta_at_checkpoint=cfg.step_size,
            gmax_at_checkpoint=res0.value,
        )
        record(0, X0, res0)

        if not (cfg.early_stop and outcome.success):
            t = 1
            X1 = step(X0, res0.grads, state.eta)
            res1 = evaluate(X1)
            if res1.value > state.g:
                state.success_count_since_checkpoint = 1
            if res1.value > state.g_max:
                state.g_max, state.X_max, state.grad_max = res1.value, X1, res1.grads
            state.X_prev, state.X, state.g, state.grad = X0, X1, res1.value, res1.grads
            record(1, X1, res1)

        schedule = checkpoint_schedule(cfg.n_iter)
        previous_checkpoint = {w: schedule[j - 1] for j, w in enumerate(schedule) if 0 < w < cfg.n_iter}

        for k in range(1, cfg.n_iter):
            if cfg.early_stop and outcome.success:
                break

            if k in previous_checkpoint:
                window = k - previous_checkpoint[k]
                too_few_increases = state.success_count_since_checkpoint < cfg.rho * window
                stalled = state.eta_at_checkpoint == state.eta and state.gmax_at_checkpoint == state.g_max
                state.eta_at_checkpoint = state.eta
                state.gmax_at_checkpoint = state.g_max
                state.success_count_since_checkpoint = 0
                if too_few_increases or stalled:
                    state.eta /= 2.0
                    state.X = state.X_max.copy()
                    state.X_prev = state.X_max.copy()
                    state.g = state.g_max
                    state.grad = state.grad_max
                    outcome.halvings.append(k)
                    outcome.restart_iterates[k] = state.X.copy()
                    logger.debug(f"[MOSAttack] [attack] step size halved to {state.eta:.3g} at iteration {k}")

            t = k + 1
            Z = step(state.X, state.grad, state.eta)
            X_new = project_set(
                state.X + cfg.alpha * (Z - state.X) + (1.0 - cfg.alpha) * (state.X - state.X_prev), x, eps
            )
            res = evaluate(X_new)
            if res.value > state.g:
                state.success_count_since_checkpoint += 1
            if res.value > state.g_max:
                state.g_max, state.X_max, state.grad_max = res.value, X_new, res.grads
            state.X_prev, state.X, state.g, state.grad = state.X, X_new, res.value, res.grads
            record(t, X_new, res)
    except NumericError as e:
        outcome.failed = True
        outcome.failure_iteration = t
        outcome.message = sanitize_error(e)
        logger.error(f"[MOSAttack] [attack] numeric failure at iteration {t}: {outcome.message}")
        if state is None:
            return outcome

    outcome.final_delta = state.X - x
    outcome.best_delta = state.X_max - x
    if not outcome.failed:
        matrix = loss_matrix_at(model, state.X, y, report_losses).values
        outcome.final_matrix = matrix
        outcome.final_losses = {int(i): float(v) for i, v in zip(report_losses, matrix.max(axis=1))}
    return outcome


def mos_attack(
    model: ClassifierWeights,
    point: LabeledPoint,
    cfg: AttackConfig,
    init_deltas: Optional[np.ndarray] = None,
) -> AttackOutcome:
    """Attack one point with K perturbations on the set objective over cfg.losses."""
    losses = parse_losses(cfg.losses)

    def evaluate(X: np.ndarray) -> SetGradient:
        return grad_objective_at(model, X, point.y, losses, cfg.mu)

    return _run(model, point, cfg, evaluate, losses, cfg.K, init_deltas)


def apgd_single(
    model: ClassifierWeights,
    point: LabeledPoint,
    loss: Union[int, LossId],
    cfg: AttackConfig,
    init_deltas: Optional[np.ndarray] = None,
) -> AttackOutcome:
    """Single-loss baseline: the same loop with one perturbation and one loss."""
    loss = to_loss_id(loss)

    def evaluate(X: np.ndarray) -> SetGradient:
        return single_loss_grad_at(model, X, point.y, loss)

    return _run(model, point, cfg, evaluate, (loss,), 1, init_deltas)


def attack_with_restarts(
    model: ClassifierWeights,
    point: LabeledPoint,
    cfg: AttackConfig,
    loss: Optional[Union[int, LossId]] = None,
) -> AttackOutcome:
    """Run ``cfg.restarts`` independent starts and keep the best.

    Restart 0 uses ``cfg.seed``; later restarts derive fresh seeds from it.
    Returns the first successful start, or else the one with the highest
    best objective. ``loss`` selects ``apgd_single``; None runs ``mos_attack``.
    """
    best: Optional[AttackOutcome] = None
    for r in range(cfg.restarts):
        seed = cfg.seed if r == 0 else derive_seed(cfg.seed, r)
        run_cfg = cfg.replace(seed=seed)
        outcome = mos_attack(model, point, run_cfg) if loss is None else apgd_single(model, point, loss, run_cfg)
        outcome.restart = r
        if outcome.success:
            return outcome
        if best is None or (not outcome.failed and (best.failed or outcome.g_max > best.g_max)):
            best = outcome
    return best


def ensemble_best(outcomes: Sequence[AttackOutcome]) -> bool:
    """A point counts as attacked if any constituent attack succeeded."""
    return any(o.success for o in outcomes)


def trace_frame(outcome: AttackOutcome) -> pd.DataFrame:
    return pd.DataFrame([asdict(row) for row in outcome.trace], columns=TRACE_COLUMNS)


def write_trace_csv(outcome: AttackOutcome, path: Union[str, Path]) -> Path:
    """Write the per-iteration trace with a version comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# mosattack-trace v{TRACE_FORMAT_VERSION}\n")
        trace_frame(outcome).to_csv(f, index=False, float_format="%.17g")
    return path


def read_trace_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
