"""End-to-end attack sweeps over an evaluation split."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from backend.attack.apgd import (
    TRACE_COLUMNS,
    TRACE_FORMAT_VERSION,
    AttackConfig,
    AttackOutcome,
    attack_with_restarts,
    ensemble_best,
)
from backend.classifier.dataset import Dataset, train_eval_split
from backend.classifier.network import ClassifierWeights, predict
from backend.classifier.training import clean_accuracy, train_toy
from backend.classifier.weights_io import load_weights, save_weights
from backend.harness.config import AttackSpec, ExperimentConfig
from backend.harness.reports import (
    CLEAN_ROW,
    PointMatrix,
    ResultRow,
    ResultsTable,
    slug,
    write_loss_matrices,
    write_results,
)
from backend.objective.scalarization import LossMatrix
from backend.utils import derive_seed, get_worker_count, sanitize_error, write_json

logger = logging.getLogger("MOSAttack")


@dataclass
class PointResult:
    """Per-point result of one attack row; outcome kept for MOS/APGD rows only."""

    point: int
    label: int
    success: bool
    clean_error: bool = False
    iteration: Optional[int] = None
    failed: bool = False
    message: str = ""
    outcome: Optional[AttackOutcome] = field(default=None, repr=False)


@dataclass
class ExperimentResult:
    table: ResultsTable
    points: Dict[str, List[PointResult]]
    model: ClassifierWeights
    eval_set: Dataset
    clean_accuracy: float
    artifacts: Dict[str, Path] = field(default_factory=dict)


def prepare_data_and_model(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset, ClassifierWeights]:
    """Generate the seeded split, then load or train the model."""
    t = cfg.training
    train_set, eval_set = train_eval_split(t.n_train, t.n_eval, t.d, t.n_classes, t.data_seed, t.spread)
    if cfg.weights_path:
        logger.info(f"[MOSAttack] [harness] loading weights from {Path(cfg.weights_path).name}")
        model = load_weights(cfg.weights_path)
    else:
        model = train_toy(t, train_set)
    return train_set, eval_set, model


def _attack_point(
    model: ClassifierWeights, point_index: int, eval_set: Dataset, spec: AttackSpec, base: AttackConfig
) -> PointResult:
    point = eval_set[point_index]
    if predict(model, point.x) != point.y:
        return PointResult(point_index, point.y, success=True, clean_error=True, iteration=0)

    seed = derive_seed(base.seed, point_index)
    try:
        if spec.kind == "mos":
            cfg = base.replace(K=spec.K, losses=spec.losses, restarts=spec.restarts, seed=seed)
            outcome = attack_with_restarts(model, point, cfg)
        elif spec.kind == "apgd":
            cfg = base.replace(K=1, restarts=spec.restarts, seed=seed)
            outcome = attack_with_restarts(model, point, cfg, loss=spec.losses[0])
        else:
            cfg = base.replace(K=1, restarts=spec.restarts, seed=seed)
            outcomes = [attack_with_restarts(model, point, cfg, loss=loss) for loss in spec.losses]
            iterations = [o.success_iteration for o in outcomes if o.success]
            failures = [o.message for o in outcomes if o.failed]
            return PointResult(
                point_index,
                point.y,
                success=ensemble_best(outcomes),
                iteration=min(iterations) if iterations else None,
                failed=bool(failures) and not iterations,
                message="; ".join(failures),
            )
    except Exception as e:
        msg = sanitize_error(e)
        logger.error(f"[MOSAttack] [harness] {spec.label} failed on point {point_index}: {msg}")
        return PointResult(point_index, point.y, success=False, failed=True, message=msg)

    return PointResult(
        point_index,
        point.y,
        success=outcome.success,
        iteration=outcome.success_iteration,
        failed=outcome.failed,
        message=outcome.message,
        outcome=outcome,
    )


def _row(spec: AttackSpec, results: Sequence[PointResult], wall_time: float) -> ResultRow:
    n = len(results)
    successes = sum(r.success for r in results)
    iterations = [r.iteration for r in results if r.success and not r.clean_error and r.iteration is not None]
    return ResultRow(
        attack=spec.label,
        kind=spec.kind,
        size=spec.size,
        asr=100.0 * successes / n if n else 0.0,
        mean_iterations=float(np.mean(iterations)) if iterations else math.nan,
        wall_time=wall_time,
    )


def _write_traces(path: Path, results: Sequence[PointResult]) -> Path:
    frames = []
    for r in results:
        if r.outcome is None or not r.outcome.trace:
            continue
        frame = pd.DataFrame([vars(row) for row in r.outcome.trace], columns=TRACE_COLUMNS)
        frame.insert(0, "point", r.point)
        frames.append(frame)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# mosattack-trace v{TRACE_FORMAT_VERSION}\n")
        if frames:
            pd.concat(frames, ignore_index=True).to_csv(f, index=False, float_format="%.17g")
        else:
            pd.DataFrame(columns=["point", *TRACE_COLUMNS]).to_csv(f, index=False)
    return path


class ExperimentRunner:
    """Runs the configured attack grid and writes its artifacts."""

    def __init__(self, cfg: ExperimentConfig, workers: Optional[int] = None, progress: bool = False) -> None:
        self.cfg = cfg
        self.workers = workers or get_worker_count()
        self.progress = progress

    def run_row(self, model: ClassifierWeights, eval_set: Dataset, spec: AttackSpec) -> Tuple[List[PointResult], float]:
        start = time.perf_counter()
        indices = range(len(eval_set))

        def work(i: int) -> PointResult:
            return _attack_point(model, i, eval_set, spec, self.cfg.attack)

        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            results = list(
                tqdm(
                    executor.map(work, indices),
                    total=len(eval_set),
                    desc=spec.label,
                    disable=not self.progress,
                )
            )
        return results, time.perf_counter() - start

    def run(self, model: Optional[ClassifierWeights] = None) -> ExperimentResult:
        cfg = self.cfg
        if model is None:
            _, eval_set, model = prepare_data_and_model(cfg)
        else:
            t = cfg.training
            _, eval_set = train_eval_split(t.n_train, t.n_eval, t.d, t.n_classes, t.data_seed, t.spread)

        accuracy = clean_accuracy(model, eval_set)
        logger.info(f"[MOSAttack] [harness] clean accuracy {accuracy:.4f} on {len(eval_set)} points")

        points: Dict[str, List[PointResult]] = {}
        rows: Dict[int, ResultRow] = {}
        ordered = sorted(range(len(cfg.attacks)), key=lambda j: cfg.attacks[j].kind == "upper-bound")
        for j in ordered:
            spec = cfg.attacks[j]
            results, wall = self.run_row(model, eval_set, spec)
            if spec.kind == "upper-bound" and spec.include_mos:
                mos_labels = {s.label for s in cfg.attacks if s.kind == "mos"}
                for other in mos_labels:
                    for r, o in zip(results, points[other]):
                        r.success = r.success or o.success
            points[spec.label] = results
            rows[j] = _row(spec, results, wall)
            logger.info(f"[MOSAttack] [harness] {spec.label}: ASR {rows[j].asr:.2f}% in {wall:.1f}s")

        clean = ResultRow(CLEAN_ROW, "clean", 0, asr=100.0 * (1.0 - accuracy))
        table = ResultsTable([clean] + [rows[j] for j in range(len(cfg.attacks))])
        table.fill_comparisons()

        result = ExperimentResult(table, points, model, eval_set, accuracy)
        result.artifacts = self.write_artifacts(result)
        return result

    def write_artifacts(self, result: ExperimentResult) -> Dict[str, Path]:
        out = self.cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = write_results(result.table, out)
        artifacts = {"results_csv": csv_path, "results_json": json_path}
        artifacts["config"] = write_json(out / "config.json", self.cfg.to_dict())
        artifacts["weights"] = save_weights(out / "model.mosw", result.model)

        for spec in self.cfg.attacks:
            results = result.points[spec.label]
            if spec.kind == "mos":
                matrices = [
                    PointMatrix(r.point, r.label, LossMatrix(r.outcome.final_matrix, spec.losses))
                    for r in results
                    if r.outcome is not None and r.outcome.final_matrix is not None
                ]
                json_m, _ = write_loss_matrices(out / "loss_matrices", spec.label, spec.losses, matrices)
                artifacts[f"loss_matrices:{spec.label}"] = json_m
            if self.cfg.write_traces and spec.kind in ("mos", "apgd"):
                artifacts[f"traces:{spec.label}"] = _write_traces(out / "traces" / f"{slug(spec.label)}.csv", results)
        return artifacts


def run_experiment(
    cfg: ExperimentConfig,
    model: Optional[ClassifierWeights] = None,
    workers: Optional[int] = None,
    progress: bool = False,
) -> ExperimentResult:
    """Train or load the model, run every attack row and write artifacts."""
    return ExperimentRunner(cfg, workers=workers, progress=progress).run(model)
