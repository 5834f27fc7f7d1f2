"""Pattern mining over loss-matrix artifacts written by attack sweeps.

Every point of every artifact is mined independently; the records are
aggregated into one histogram and written as a JSON report plus a
``<name>_filtered.json`` view of the patterns holding at least 1%.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from backend.errors import MOSAttackError
from backend.miner.patterns import MinerConfig, PatternRecord, aggregate_patterns, mine_point
from backend.harness.reports import read_loss_matrices
from backend.utils import get_worker_count, sanitize_error, write_json

logger = logging.getLogger("MOSAttack")

PATTERN_FORMAT = "mosattack-patterns"
PATTERN_FORMAT_VERSION = 1


class MinerRunner:
    """Mines synergy patterns from loss-matrix artifacts."""

    @staticmethod
    def run(
        artifacts: Sequence[Union[str, Path]],
        cfg: MinerConfig,
        out_path: Optional[Union[str, Path]] = None,
        by_label: bool = False,
        workers: Optional[int] = None,
    ) -> Dict[str, Any]:
        """
        Mine every point of every artifact and aggregate the masks.

        Each artifact's attack name becomes the record label, so passing
        artifacts from several models with ``by_label`` gives per-model
        histograms next to the pooled one.

        Returns:
            Dictionary with success status, message, histogram and records.
        """
        try:
            cfg.validate()
            records: List[PatternRecord] = []
            failed = 0
            for artifact in artifacts:
                label, points = read_loss_matrices(artifact)

                def work(p):
                    try:
                        return mine_point(p.matrix, cfg, label=label)
                    except MOSAttackError as e:
                        logger.error(f"[MOSAttack] [miner] point {p.point} of {label}: {sanitize_error(e)}")
                        return None

                with ThreadPoolExecutor(max_workers=workers or get_worker_count()) as executor:
                    mined = list(executor.map(work, points))
                failed += sum(r is None for r in mined)
                records.extend(r for r in mined if r is not None)

            hist = aggregate_patterns(records, by_label=by_label)
            result = {
                "success": True,
                "message": f"Mined {len(records)} points ({failed} failed)",
                "histogram": hist,
                "records": records,
            }
            if out_path is not None:
                out_path = Path(out_path)
                write_json(
                    out_path,
                    {
                        "format": PATTERN_FORMAT,
                        "version": PATTERN_FORMAT_VERSION,
                        "config": cfg.to_dict(),
                        "histogram": hist.to_dict(),
                        "records": [
                            {"label": r.label, "beta": list(r.beta), "masks": {str(k): list(v) for k, v in r.masks.items()}}
                            for r in records
                        ],
                    },
                )
                result["filtered_path"] = write_json(
                    out_path.with_name(f"{out_path.stem}_filtered.json"),
                    {"format": PATTERN_FORMAT, "version": PATTERN_FORMAT_VERSION, "filtered": hist.filtered},
                )
                result["path"] = out_path
            return result
        except Exception as e:
            logger.error(f"[MOSAttack] [miner] run failed: {e}")
            return {"success": False, "message": sanitize_error(e)}
