import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import orjson

from backend.errors import ConfigError, MOSAttackError

logger = logging.getLogger("MOSAttack")

# Pre-compiled regexes for error sanitization
_RE_QUOTED_UNIX_PATH = re.compile(r"(['\"])(/.*?)\1")
_RE_QUOTED_WIN_PATH = re.compile(r"(['\"])([a-zA-Z]:\\\\?.*?)\1")
_CHARS = r"\w\.\-@+=%~#"
_RE_UNIX_PATH = re.compile(rf"(?<!\w)(?<!://)(?<!:/)(/(?:[{_CHARS}][{_CHARS} ]*/)*[{_CHARS}][{_CHARS} ]*)")

DEFAULT_WORKERS = 1


def sanitize_error(e: Exception) -> str:
    """
    Sanitize exception messages before they are written into reports.

    Toolkit errors and validation errors are returned as-is, since they carry
    the information a user needs (loss id, byte offset, ...). I/O errors lose
    their paths and anything unexpected collapses to a generic message.
    """
    if isinstance(e, (MOSAttackError, ValueError, TypeError, ArithmeticError)):
        msg = str(e)
        msg = _RE_QUOTED_UNIX_PATH.sub(r"\1[REDACTED_PATH]\1", msg)
        msg = _RE_QUOTED_WIN_PATH.sub(r"\1[REDACTED_PATH]\1", msg)
        return _RE_UNIX_PATH.sub("[REDACTED_PATH]", msg)

    if isinstance(e, OSError):
        return "An I/O error occurred. Please check the logs."

    return "An internal error occurred."


def get_worker_count() -> int:
    """Worker count for sweeps, from MOSATTACK_WORKERS (default 1)."""
    raw = os.environ.get("MOSATTACK_WORKERS", str(DEFAULT_WORKERS))
    try:
        workers = int(raw)
    except ValueError:
        logger.warning(f"[MOSAttack] Ignoring non-integer MOSATTACK_WORKERS={raw!r}")
        return DEFAULT_WORKERS
    return max(1, workers)


def derive_seed(*parts: int) -> int:
    """
    Derive a 32-bit seed from a tuple of integers.

    Per-point and per-restart streams do not depend on scheduling order:
    serial and parallel sweeps see the same streams.
    """
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def dump_json(data: Any) -> bytes:
    """Serialize to pretty JSON bytes, numpy-aware."""
    return orjson.dumps(
        data, option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_INDENT_2 | orjson.OPT_NON_STR_KEYS
    )


def write_json(path: Union[str, Path], data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dump_json(data))
    return path


def read_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    try:
        return orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as e:
        raise ConfigError(f"Malformed JSON in {path.name}: {e}") from e


def load_config(
    path: Optional[Union[str, Path]], defaults: Mapping[str, Any]
) -> Dict[str, Any]:
    """Load a JSON config file merged over defaults.

    Args:
        path: Config file location. None or a missing file yields the defaults.
        defaults: Documented default values.

    Returns:
        Dictionary with every default key present.

    Raises:
        ConfigError: If the file exists but is not a JSON object.
    """
    merged = dict(defaults)
    if path is None:
        return merged

    path = Path(path)
    if not path.exists():
        logger.info(f"[MOSAttack] Config file {path.name} not found, using defaults")
        return merged

    try:
        data = read_json(path)
    except OSError as e:
        raise ConfigError(f"Could not read config file {path.name}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path.name} must contain a JSON object")

    merged.update(data)
    return merged


def save_config(path: Union[str, Path], updates: Mapping[str, Any]) -> bool:
    """Merge updates into a JSON config file and write it back.

    Returns:
        True if the save succeeded, False otherwise.
    """
    path = Path(path)
    try:
        current = load_config(path, {})
    except ConfigError as e:
        logger.warning(f"[MOSAttack] Overwriting unreadable config {path.name}: {e}")
        current = {}
    current.update(updates)

    try:
        write_json(path, current)
        return True
    except (OSError, TypeError) as e:
        logger.error(f"[MOSAttack] Could not save config to {path.name}: {e}")
        return False
