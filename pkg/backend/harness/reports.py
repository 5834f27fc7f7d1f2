"""Results tables, loss-matrix artifacts and merged reports.

File formats (all carry a version):

* ``results.csv``: comment line ``# mosattack-results v1`` then columns
  ``attack, kind, size, asr, mean_iterations, wall_time, diff_mos_ce,
  gap_to_upper``. ``results.json`` holds the same rows under ``"rows"``.
* ``loss_matrices/<attack>.json``: ``{"format": "mosattack-loss-matrices",
  "version": 1, "attack", "losses", "points": [{"point", "label", "values"}]}``
  with ``values`` an m x K nested list; ``.csv`` alongside in long form
  (``point, label, loss, k, value``).
* ``report_table.csv`` / ``report_long.csv`` from ``merge_reports``.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from backend.errors import ConfigError
from backend.objective.scalarization import LossMatrix
from backend.utils import read_json, sanitize_error, write_json

logger = logging.getLogger("MOSAttack")

RESULTS_FORMAT_VERSION = 1
LOSS_MATRIX_FORMAT = "mosattack-loss-matrices"
LOSS_MATRIX_FORMAT_VERSION = 1
CLEAN_ROW = "Clean error"


@dataclass
class ResultRow:
    attack: str
    kind: str
    size: int
    asr: float
    mean_iterations: float = math.nan
    wall_time: float = 0.0
    diff_mos_ce: float = math.nan
    gap_to_upper: float = math.nan


RESULT_COLUMNS = [f.name for f in fields(ResultRow)]


def _same(a: Any, b: Any) -> bool:
    if isinstance(a, float) and isinstance(b, float):
        return (math.isnan(a) and math.isnan(b)) or a == b
    return a == b


@dataclass
class ResultsTable:
    rows: List[ResultRow] = field(default_factory=list)

    def row(self, attack: str) -> Optional[ResultRow]:
        return next((r for r in self.rows if r.attack == attack), None)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=RESULT_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ResultsTable":
        rows = []
        for rec in frame.to_dict(orient="records"):
            rows.append(
                ResultRow(
                    attack=str(rec["attack"]),
                    kind=str(rec["kind"]),
                    size=int(rec["size"]),
                    **{c: float(rec[c]) for c in RESULT_COLUMNS[3:]},
                )
            )
        return cls(rows)

    def same_results(self, other: "ResultsTable") -> bool:
        """Equality on every column except wall time."""
        if len(self.rows) != len(other.rows):
            return False
        for a, b in zip(self.rows, other.rows):
            for name in RESULT_COLUMNS:
                if name != "wall_time" and not _same(getattr(a, name), getattr(b, name)):
                    return False
        return True

    def fill_comparisons(self) -> None:
        """Compute Diff MOS|CE for MOS rows and the gap to the upper bound."""
        ce = next((r for r in self.rows if r.kind == "apgd" and r.attack.startswith("APGD-CE(")), None)
        upper = next((r for r in self.rows if r.kind == "upper-bound"), None)
        for r in self.rows:
            if r.kind == "mos" and ce is not None:
                r.diff_mos_ce = r.asr - ce.asr
            if upper is not None and r.kind != "clean" and r is not upper:
                r.gap_to_upper = upper.asr - r.asr


def write_results(table: ResultsTable, out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"
    with open(csv_path, "w", newline="") as f:
        f.write(f"# mosattack-results v{RESULTS_FORMAT_VERSION}\n")
        table.to_frame().to_csv(f, index=False, float_format="%.17g")
    json_path = write_json(
        out_dir / "results.json",
        {"format": "mosattack-results", "version": RESULTS_FORMAT_VERSION, "rows": [asdict(r) for r in table.rows]},
    )
    return csv_path, json_path


def read_results_csv(path: Union[str, Path]) -> ResultsTable:
    path = Path(path)
    with open(path) as f:
        header = f.readline().strip()
    if header != f"# mosattack-results v{RESULTS_FORMAT_VERSION}":
        raise ConfigError(f"{path.name} is not a version {RESULTS_FORMAT_VERSION} results file")
    return ResultsTable.from_frame(pd.read_csv(path, comment="#"))


def render_table(table: ResultsTable, title: str = "Attack success rate") -> Table:
    view = Table(title=title)
    for col in ("Attack", "K/restarts", "ASR %", "Mean iters", "Wall s", "Diff MOS|CE", "Gap to UB"):
        view.add_column(col, justify="left" if col == "Attack" else "right")

    def fmt(v: float, digits: int = 2) -> str:
        return "-" if math.isnan(v) else f"{v:.{digits}f}"

    for r in table.rows:
        view.add_row(
            r.attack,
            str(r.size),
            fmt(r.asr),
            fmt(r.mean_iterations, 1),
            fmt(r.wall_time),
            fmt(r.diff_mos_ce),
            fmt(r.gap_to_upper),
        )
    return view


def print_table(table: ResultsTable, console: Optional[Console] = None) -> None:
    (console or Console()).print(render_table(table))


# ---------------------------------------------------------------------------
# Loss-matrix artifacts
# ---------------------------------------------------------------------------


@dataclass
class PointMatrix:
    point: int
    label: int
    matrix: LossMatrix


def slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name).strip("_")


def write_loss_matrices(
    out_dir: Union[str, Path], attack: str, losses: Sequence[int], points: Sequence[PointMatrix]
) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = slug(attack)
    json_path = write_json(
        out_dir / f"{stem}.json",
        {
            "format": LOSS_MATRIX_FORMAT,
            "version": LOSS_MATRIX_FORMAT_VERSION,
            "attack": attack,
            "losses": [int(i) for i in losses],
            "points": [{"point": p.point, "label": p.label, "values": p.matrix.values.tolist()} for p in points],
        },
    )
    records = [
        (p.point, p.label, p.matrix.losses[i], k, float(p.matrix.values[i, k]))
        for p in points
        for i in range(p.matrix.m)
        for k in range(p.matrix.K)
    ]
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as f:
        f.write(f"# {LOSS_MATRIX_FORMAT} v{LOSS_MATRIX_FORMAT_VERSION}\n")
        pd.DataFrame(records, columns=["point", "label", "loss", "k", "value"]).to_csv(
            f, index=False, float_format="%.17g"
        )
    return json_path, csv_path


def read_loss_matrices(path: Union[str, Path]) -> Tuple[str, List[PointMatrix]]:
    """Load a loss-matrix artifact (JSON or long-form CSV).

    Returns:
        (attack name, per-point matrices).

    Raises:
        ConfigError: On an unknown format or version.
    """
    path = Path(path)
    if path.suffix.lower() == ".csv":
        frame = pd.read_csv(path, comment="#")
        points = []
        for (point, label), group in frame.groupby(["point", "label"], sort=True):
            losses = sorted(group["loss"].unique())
            K = int(group["k"].max()) + 1
            values = np.zeros((len(losses), K))
            row_of = {loss: i for i, loss in enumerate(losses)}
            for rec in group.itertuples(index=False):
                values[row_of[rec.loss], int(rec.k)] = rec.value
            points.append(PointMatrix(int(point), int(label), LossMatrix(values, tuple(int(v) for v in losses))))
        return path.stem, points

    data = read_json(path)
    if data.get("format") != LOSS_MATRIX_FORMAT or data.get("version") != LOSS_MATRIX_FORMAT_VERSION:
        raise ConfigError(f"{path.name} is not a version {LOSS_MATRIX_FORMAT_VERSION} loss-matrix artifact")
    losses = tuple(int(i) for i in data["losses"])
    points = [
        PointMatrix(int(p["point"]), int(p["label"]), LossMatrix(np.asarray(p["values"], dtype=np.float64), losses))
        for p in data["points"]
    ]
    return str(data.get("attack", path.stem)), points


# ---------------------------------------------------------------------------
# Merged reports
# ---------------------------------------------------------------------------


def long_format(table: ResultsTable, run: str) -> pd.DataFrame:
    """Plot-ready rows: run, attack, kind, size, metric, value."""
    frame = table.to_frame()
    long = frame.melt(id_vars=["attack", "kind", "size"], var_name="metric", value_name="value")
    long.insert(0, "run", run)
    return long


def merge_reports(results: Sequence[Union[str, Path]], out_dir: Union[str, Path]) -> Dict[str, Any]:
    """Merge results CSVs into a wide ASR table and a long-format table.

    Each input is labeled by its parent directory name.

    Returns:
        Dict with success flag, message and the two output paths.
    """
    try:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        longs = []
        for path in results:
            path = Path(path)
            longs.append(long_format(read_results_csv(path), path.parent.name or path.stem))
        if not longs:
            return {"success": False, "message": "No results files given"}
        long = pd.concat(longs, ignore_index=True)
        asr = long[long["metric"] == "asr"]
        wide = asr.pivot_table(index=["attack", "kind", "size"], columns="run", values="value", sort=False).reset_index()
        table_path = out_dir / "report_table.csv"
        long_path = out_dir / "report_long.csv"
        wide.to_csv(table_path, index=False, float_format="%.6g")
        long.to_csv(long_path, index=False, float_format="%.17g")
        logger.info(f"[MOSAttack] [report] merged {len(longs)} runs into {table_path.name}")
        return {"success": True, "message": f"Merged {len(longs)} runs", "table": table_path, "long": long_path}
    except (OSError, ConfigError, KeyError, ValueError) as e:
        logger.error(f"[MOSAttack] [report] merge failed: {e}")
        return {"success": False, "message": sanitize_error(e)}
