"""
Metrics log shared by every runner
Holds (event_time, round, entity, metric, value) records and the end-of-run summary
"""
import logging
from dataclasses import astuple, dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

COLUMNS = ["event_time", "round", "entity", "metric", "value"]
GLOBAL = "global"


def client_entity(client_id: int) -> str:
    return f"client_{client_id}"


def class_entity(class_id: int) -> str:
    return f"class_{class_id}"


@dataclass(frozen=True)
class MetricRecord:
    event_time: float
    round: int
    entity: str
    metric: str
    value: float


class MetricsLog:
    """
    Append-only record of a run
    event_time never decreases; the summary is filled in by finalize()
    """

    def __init__(self, runner: str, seed: int):
        self.runner = runner
        self.seed = seed
        self.records: List[MetricRecord] = []
        self.summary: Dict[str, Any] = {}
        self.aborted = False
        self.error: Optional[str] = None
        # final ServerState of protocol runs, kept for checkpointing
        self.final_state: Optional[Any] = None

    def record(self, event_time: float, round_no: int, entity: str, metric: str, value: float) -> None:
        if self.records and event_time < self.records[-1].event_time:
            raise ValueError(f"event_time {event_time} precedes {self.records[-1].event_time}")
        self.records.append(MetricRecord(float(event_time), int(round_no), entity, metric, float(value)))

    def abort(self, message: str) -> None:
        self.aborted = True
        self.error = message
        logger.warning("%s run aborted: %s", self.runner, message)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([astuple(r) for r in self.records], columns=COLUMNS)

    def select(self, metric: str, entity: Optional[str] = None) -> List[MetricRecord]:
        return [r for r in self.records if r.metric == metric and (entity is None or r.entity == entity)]

    def accuracy_curve(self) -> List[float]:
        """Global accuracy after each completed round, in round order"""
        return [r.value for r in self.select("accuracy", GLOBAL)]

    def client_accuracy(self) -> Dict[int, float]:
        """Last recorded accuracy per client"""
        latest: Dict[int, float] = {}
        for r in self.select("accuracy"):
            if r.entity.startswith("client_"):
                latest[int(r.entity.removeprefix("client_"))] = r.value
        return latest

    def rounds_completed(self) -> int:
        return len(self.accuracy_curve())

    def finalize(self, target_accuracy: float, unreliable: Iterable[int] = (),
                 gate: Optional[Dict[str, Any]] = None,
                 interactions: Optional[Dict[int, int]] = None) -> Dict[str, Any]:
        """
        Build the end-of-run summary

        Args:
            target_accuracy (float): accuracy whose first crossing defines rounds_to_target
            unreliable: ids of corrupted clients, reported apart from the honest ones
            gate (dict): gate statistics from gate_statistics(), protocol runs only
            interactions (dict): interaction count per client

        Returns:
            Dict: the summary, also stored on the log
        """
        curve = self.accuracy_curve()
        per_client = self.client_accuracy()
        unreliable = sorted(set(unreliable))
        honest = [acc for k, acc in per_client.items() if k not in unreliable]
        corrupted = [acc for k, acc in per_client.items() if k in unreliable]
        reached = [i + 1 for i, acc in enumerate(curve) if acc >= target_accuracy]

        self.summary = {
            "runner": self.runner,
            "seed": self.seed,
            "aborted": self.aborted,
            "error": self.error,
            "rounds_completed": len(curve),
            "final_global_accuracy": curve[-1] if curve else None,
            "final_client_accuracy": {str(k): per_client[k] for k in sorted(per_client)},
            "target_accuracy": target_accuracy,
            "rounds_to_target": reached[0] if reached else None,
            "unreliable_clients": unreliable,
            "honest_accuracy": float(np.mean(honest)) if (unreliable and honest) else None,
            "unreliable_accuracy": float(np.mean(corrupted)) if corrupted else None,
            "gate": gate,
            "interactions": {str(k): v for k, v in sorted((interactions or {}).items())},
        }
        return self.summary


def gate_statistics(gate_log: Sequence[Any], rejections: Dict[int, int]) -> Dict[str, Any]:
    """Learned / skipped / takeover counts overall and per client, plus rejected uploads"""
    per_client: Dict[int, Dict[str, int]] = {}

    def bucket(client_id: int) -> Dict[str, int]:
        return per_client.setdefault(client_id, {"learned": 0, "skipped": 0, "takeovers": 0, "rejected": 0})

    for record in gate_log:
        counts = bucket(record.client)
        counts["learned" if record.learned else "skipped"] += 1
        counts["takeovers"] += int(record.takeover)
    for client_id, count in rejections.items():
        bucket(client_id)["rejected"] += count

    totals = {key: sum(c[key] for c in per_client.values()) for key in ("learned", "skipped", "takeovers", "rejected")}
    return {**totals, "per_client": {str(k): per_client[k] for k in sorted(per_client)}}
