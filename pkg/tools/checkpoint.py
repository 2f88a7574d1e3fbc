"""
tools/checkpoint.py - Binary checkpoint container for the server state
Layout: magic | u16 version | u32 header length | JSON header | little-endian float64 payload | u32 CRC32
"""
import json
import logging
import struct
import zlib
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from agents.server import GateRecord, ServerState
from config import CHECKPOINT_CONFIG
from core.knowledge import KnowledgeEntry, KnowledgeTable
from core.neural import DenseLayer, ModelParams
from tools.exports import atomic_write_bytes
from utils.errors import CheckpointError

logger = logging.getLogger(__name__)

_PREFIX = struct.Struct("<4sHI")
_TRAILER = struct.Struct("<I")


def _header(server: ServerState) -> Dict[str, Any]:
    table = server.table
    return {
        "dim": table.dim,
        "num_classes": server.num_classes,
        "classifier": {
            "role": server.classifier.role,
            "layers": [
                {"shape": list(layer.weight.shape), "activation": layer.activation}
                for layer in server.classifier.layers
            ],
        },
        "table": [
            {"class_id": c, "initialized": e.initialized, "last_winner": e.last_winner}
            for c, e in sorted(table.entries.items())
        ],
        "gate_log": [record.to_dict() for record in server.gate_log],
        "rejections": {str(k): v for k, v in sorted(server.rejections.items())},
    }


def encode_checkpoint(server: ServerState) -> bytes:
    dtype = np.dtype(CHECKPOINT_CONFIG["dtype"])
    arrays: List[np.ndarray] = list(server.classifier.arrays())
    for _, entry in sorted(server.table.entries.items()):
        arrays.extend([entry.mean, entry.cov])
    payload = b"".join(np.ascontiguousarray(a, dtype=dtype).tobytes() for a in arrays)
    header = json.dumps(_header(server), sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(CHECKPOINT_CONFIG["magic"], CHECKPOINT_CONFIG["version"], len(header)) + header + payload
    return body + _TRAILER.pack(zlib.crc32(body))


def decode_checkpoint(blob: bytes) -> ServerState:
    """
    Rebuild a ServerState from checkpoint bytes

    Raises:
        CheckpointError: bad magic, unsupported version, checksum mismatch or inconsistent sizes
    """
    if len(blob) < _PREFIX.size + _TRAILER.size:
        raise CheckpointError("truncated checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != CHECKPOINT_CONFIG["magic"]:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != CHECKPOINT_CONFIG["version"]:
        raise CheckpointError(f"unsupported version {version}")
    body, (stored,) = blob[:-_TRAILER.size], _TRAILER.unpack(blob[-_TRAILER.size:])
    if zlib.crc32(body) != stored:
        raise CheckpointError("checksum mismatch")

    try:
        header = json.loads(body[_PREFIX.size:_PREFIX.size + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"unreadable header: {err}") from None
    values = np.frombuffer(body[_PREFIX.size + header_len:], dtype=np.dtype(CHECKPOINT_CONFIG["dtype"]))
    cursor = 0

    def take(shape) -> np.ndarray:
        nonlocal cursor
        size = int(np.prod(shape))
        if cursor + size > values.shape[0]:
            raise CheckpointError("payload shorter than header describes")
        chunk = values[cursor:cursor + size].astype(np.float64).reshape(shape)
        cursor += size
        return chunk

    layers = []
    for spec in header["classifier"]["layers"]:
        weight = take(tuple(spec["shape"]))
        bias = take((spec["shape"][0],))
        layers.append(DenseLayer(weight, bias, spec["activation"]))
    classifier = ModelParams(layers=tuple(layers), role=header["classifier"]["role"])

    dim = header["dim"]
    entries = {}
    for item in header["table"]:
        mean = take((dim,))
        cov = take((dim, dim))
        entries[item["class_id"]] = KnowledgeEntry(mean, cov, item["initialized"], item["last_winner"])
    if cursor != values.shape[0]:
        raise CheckpointError("payload longer than header describes")

    return ServerState(
        classifier=classifier,
        table=KnowledgeTable(entries, dim),
        gate_log=tuple(GateRecord(**record) for record in header["gate_log"]),
        rejections={int(k): v for k, v in header["rejections"].items()},
    )


def save_checkpoint(server: ServerState, path) -> Path:
    path = Path(path)
    atomic_write_bytes(path, encode_checkpoint(server))
    logger.info("Saved checkpoint to %s", path)
    return path


def load_checkpoint(path) -> ServerState:
    try:
        blob = Path(path).read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read {path}: {err.strerror}") from None
    return decode_checkpoint(blob)
