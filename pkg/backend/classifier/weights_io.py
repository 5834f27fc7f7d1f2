"""Binary weight file format.

Layout (little-endian)::

    4 bytes   magic  b"MOSW"
    uint16    format version (1)
    uint16    number of layer dims L
    L*uint32  layer dims (d, hidden..., C)
    float64   for each layer: weight matrix (out x in, row-major), then bias

The training report is not stored.
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from backend.classifier.network import ClassifierWeights
from backend.errors import InvalidArgumentError, WeightFileError

logger = logging.getLogger("MOSAttack")

MAGIC = b"MOSW"
FORMAT_VERSION = 1
_FLOAT = np.dtype("<f8")


def encode_weights(w: ClassifierWeights) -> bytes:
    header = MAGIC + struct.pack("<HH", FORMAT_VERSION, len(w.layer_dims))
    header += struct.pack(f"<{len(w.layer_dims)}I", *w.layer_dims)
    body = b"".join(
        np.ascontiguousarray(arr, dtype=_FLOAT).tobytes()
        for weight, bias in zip(w.weights, w.biases)
        for arr in (weight, bias)
    )
    return header + body


def decode_weights(data: bytes) -> ClassifierWeights:
    """Parse weight-file bytes.

    Raises:
        WeightFileError: With the byte offset of the first defect.
    """
    if len(data) < 4:
        raise WeightFileError("truncated magic", len(data))
    if data[:4] != MAGIC:
        raise WeightFileError(f"bad magic {data[:4]!r}", 0)
    offset = 4
    if len(data) < offset + 4:
        raise WeightFileError("truncated header", len(data))
    version, n_dims = struct.unpack_from("<HH", data, offset)
    if version != FORMAT_VERSION:
        raise WeightFileError(f"unsupported format version {version}", offset)
    offset += 2
    if n_dims < 2:
        raise WeightFileError(f"need at least 2 layer dims, got {n_dims}", offset)
    offset += 2

    if len(data) < offset + 4 * n_dims:
        raise WeightFileError("truncated layer dims", len(data))
    dims = struct.unpack_from(f"<{n_dims}I", data, offset)
    for j, v in enumerate(dims):
        if v == 0:
            raise WeightFileError("zero layer width", offset + 4 * j)
    offset += 4 * n_dims

    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        for shape in ((fan_out, fan_in), (fan_out,)):
            count = int(np.prod(shape))
            end = offset + count * _FLOAT.itemsize
            if len(data) < end:
                raise WeightFileError("truncated parameter block", len(data))
            arr = np.frombuffer(data, dtype=_FLOAT, count=count, offset=offset).reshape(shape)
            bad = np.flatnonzero(~np.isfinite(arr.ravel()))
            if bad.size:
                raise WeightFileError("non-finite parameter", offset + int(bad[0]) * _FLOAT.itemsize)
            (weights if len(shape) == 2 else biases).append(arr.astype(np.float64))
            offset = end

    if offset != len(data):
        raise WeightFileError(f"{len(data) - offset} trailing bytes", offset)
    try:
        return ClassifierWeights(tuple(dims), tuple(weights), tuple(biases))
    except InvalidArgumentError as e:
        raise WeightFileError(str(e), 4) from e


def save_weights(path: Union[str, Path], w: ClassifierWeights) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_weights(w))
    logger.info(f"[MOSAttack] Saved weights {w.layer_dims} to {path.name}")
    return path


def load_weights(path: Union[str, Path]) -> ClassifierWeights:
    return decode_weights(Path(path).read_bytes())
