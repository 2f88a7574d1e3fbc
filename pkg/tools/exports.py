"""
tools/exports.py - Run output writers
Metrics CSV/JSONL through pandas, schema-checked summary and gate-log JSON, atomic file replacement
"""
import json
import logging
import os
import tempfile
from dataclasses import astuple
from pathlib import Path
from typing import Any, Dict, Iterable

import jsonschema

from flows.metrics import COLUMNS, MetricsLog

logger = logging.getLogger(__name__)

_NULLABLE_NUMBER = {"type": ["number", "null"]}
_COUNTS = {
    "type": "object",
    "properties": {k: {"type": "integer", "minimum": 0} for k in ("learned", "skipped", "takeovers", "rejected")},
    "required": ["learned", "skipped", "takeovers", "rejected"],
}

SUMMARY_SCHEMA = {
    "type": "object",
    "properties": {
        "runner": {"enum": ["protocol", "fedavg", "single", "centralized"]},
        "seed": {"type": "integer"},
        "aborted": {"type": "boolean"},
        "error": {"type": ["string", "null"]},
        "rounds_completed": {"type": "integer", "minimum": 0},
        "final_global_accuracy": _NULLABLE_NUMBER,
        "final_client_accuracy": {"type": "object", "additionalProperties": {"type": "number"}},
        "target_accuracy": {"type": "number"},
        "rounds_to_target": {"type": ["integer", "null"]},
        "unreliable_clients": {"type": "array", "items": {"type": "integer"}},
        "honest_accuracy": _NULLABLE_NUMBER,
        "unreliable_accuracy": _NULLABLE_NUMBER,
        "gate": {
            "oneOf": [
                {"type": "null"},
                {
                    "allOf": [_COUNTS],
                    "properties": {"per_client": {"type": "object", "additionalProperties": _COUNTS}},
                    "required": ["per_client"],
                },
            ]
        },
        "interactions": {"type": "object", "additionalProperties": {"type": "integer"}},
    },
    "required": ["runner", "seed", "aborted", "rounds_completed", "final_global_accuracy", "gate"],
}

GATE_RECORD_SCHEMA = {
    "type": "object",
    "properties": {
        "client": {"type": "integer"},
        "class_id": {"type": "integer", "minimum": 0},
        "trace_k": {"type": "number"},
        "trace_r": _NULLABLE_NUMBER,
        "initialized": {"type": "boolean"},
        "learned": {"type": "boolean"},
        "takeover": {"type": "boolean"},
        "gated": {"type": "boolean"},
        "timestamp": {"type": "number"},
    },
    "required": ["client", "class_id", "trace_k", "trace_r", "initialized", "learned", "takeover"],
    "additionalProperties": False,
}


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a temp file in the target directory, then os.replace it into place"""
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def metrics_csv(log: MetricsLog) -> str:
    return log.to_frame().to_csv(index=False, lineterminator="\n")


def metrics_jsonl(log: MetricsLog) -> str:
    """One JSON object per record; floats keep their full repr like the CSV"""
    return "".join(json.dumps(dict(zip(COLUMNS, astuple(r)))) + "\n" for r in log.records)


def summary_json(summary: Dict[str, Any]) -> str:
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def gate_log_jsonl(records: Iterable[Any]) -> str:
    lines = []
    for record in records:
        item = record.to_dict()
        jsonschema.validate(item, GATE_RECORD_SCHEMA)
        lines.append(json.dumps(item, sort_keys=True))
    return "".join(line + "\n" for line in lines)


def write_run_outputs(log: MetricsLog, out_dir, names: Dict[str, str]) -> Dict[str, Path]:
    """
    Write metrics, summary and gate log for a finished run

    Args:
        log: finished metrics log (summary already built)
        out_dir: existing output directory
        names: file names keyed as in EXPORT_CONFIG

    Returns:
        Dict[str, Path]: written files by key
    """
    out_dir = Path(out_dir)
    gate_log = getattr(log.final_state, "gate_log", ())
    contents = {
        "metrics_csv": metrics_csv(log),
        "metrics_jsonl": metrics_jsonl(log),
        "summary_json": summary_json(log.summary),
        "gate_log_jsonl": gate_log_jsonl(gate_log),
    }
    written = {}
    for key, text in contents.items():
        target = out_dir / names[key]
        atomic_write_text(target, text)
        written[key] = target
        logger.info("Wrote %s", target)
    return written
