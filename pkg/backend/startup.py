import os
import logging
import uuid
from pathlib import Path
from typing import Dict, Any, Iterable, Optional, Callable

from backend.errors import InvalidArgumentError
from backend.losses.surrogates import parse_losses
from backend.utils import get_worker_count

logger = logging.getLogger("MOSAttack")


def run_preflight_checks(
    output_dir: Path,
    loss_lists: Iterable[Iterable[int]],
    workers: Optional[int] = None,
    status_callback: Optional[Callable[[str], None]] = None
) -> Dict[str, Any]:
    """
    Performs checks before a sweep starts:
    1. Output directory can be created and written to.
    2. Every configured loss id is valid.
    3. Worker count is sane for this machine.

    Args:
        output_dir: Where artifacts will be written
        loss_lists: Loss id lists of every attack row
        workers: Worker count (defaults to MOSATTACK_WORKERS)
        status_callback: Optional callback to update status message

    Returns:
        Dictionary with status and message
    """
    logger.info("[MOSAttack] Performing pre-flight checks...")

    # 1. Output directory
    result = check_output_dir(output_dir)
    if result["status"] != "completed":
        return result
    if status_callback:
        status_callback("Output directory is writable")

    # 2. Loss ids
    for losses in loss_lists:
        try:
            parse_losses(list(losses))
        except InvalidArgumentError as e:
            msg = f"Invalid loss configuration: {e}"
            logger.error(f"[MOSAttack] {msg}")
            return {"status": "failed", "message": msg}

    # 3. Workers
    workers = workers or get_worker_count()
    cpus = os.cpu_count() or 1
    if workers > cpus:
        logger.warning(f"[MOSAttack] {workers} workers requested on {cpus} CPUs; sweeps will oversubscribe")

    return {"status": "completed", "message": f"Pre-flight checks passed ({workers} workers)"}


def check_output_dir(output_dir: Path) -> Dict[str, Any]:
    """
    Checks that the output directory exists (creating it) and is writable.
    """
    out = Path(output_dir).resolve()
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        return {"status": "failed", "message": f"Could not create output directory: {e}"}

    # Write and remove a uniquely named probe file
    probe = out / f".write_test_{uuid.uuid4().hex}"
    try:
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as e:
        logger.error(f"[MOSAttack] Output directory not writable: {e}")
        return {"status": "failed", "message": f"Output directory is not writable: {e}"}

    return {"status": "completed", "message": "Output directory is writable"}
