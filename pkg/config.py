"""
Configuration for the contrastive knowledge-sharing simulator
Centralizes all configuration settings: training hyperparameters, datasets, partitions,
schedules, runner selection and the environment overrides
"""
import logging
import os
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from utils.errors import ConfigError

# Load environment variables from .env file
load_dotenv()

OUTPUT_ROOT = os.getenv("COGSHARE_OUTPUT_ROOT")
LOG_LEVEL = os.getenv("COGSHARE_LOG_LEVEL", "INFO")

# Checkpoint container settings
CHECKPOINT_CONFIG = {
    "magic": b"CGSK",
    "version": 1,
    "dtype": "<f8",
}

# Run output file names
EXPORT_CONFIG = {
    "metrics_csv": "metrics.csv",
    "metrics_jsonl": "metrics.jsonl",
    "summary_json": "summary.json",
    "gate_log_jsonl": "gate_log.jsonl",
    "checkpoint": "server.ckpt",
    "lock_file": ".lock",
}


def configure_logging(level: Optional[str] = None) -> None:
    """Install a single stderr handler on the root logger"""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _positive(name: str, value):
    if value is None or value <= 0:
        raise ValueError(f"{name} must be > 0")
    return value


def _unit_interval(name: str, value: float, upper_open: bool = False) -> float:
    if value < 0 or value > 1 or (upper_open and value >= 1):
        bracket = ")" if upper_open else "]"
        raise ValueError(f"{name} out of [0,1{bracket}")
    return value


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TrainConfig(_Strict):
    """Hyperparameters shared by clients, server and baselines"""
    learning_rate: float = 0.05
    batch_size: int = 64
    margin: float = 1.0
    alpha: float = 0.9
    beta: float = 1.25
    ridge: float = 1e-4
    local_epochs: int = 1
    noise_dim: int = 8
    embed_dim: int = 8
    hidden_dim: int = 64
    contrastive_weight: float = 1.0
    collaborative_weight: float = 1.0
    sample_covariance: bool = False
    max_grad_norm: Optional[float] = 10.0
    gating: bool = True

    @field_validator("learning_rate", "margin", "ridge")
    @classmethod
    def _check_positive_real(cls, value, info):
        return _positive(info.field_name, value)

    @field_validator("contrastive_weight", "collaborative_weight")
    @classmethod
    def _check_weight(cls, value, info):
        if value < 0:
            raise ValueError(f"{info.field_name} must be >= 0")
        return value

    @field_validator("batch_size", "noise_dim", "embed_dim", "hidden_dim")
    @classmethod
    def _check_positive_int(cls, value, info):
        return _positive(info.field_name, value)

    @field_validator("local_epochs")
    @classmethod
    def _check_epochs(cls, value):
        # zero epochs is allowed: the client only swaps in the broadcast classifier
        if value < 0:
            raise ValueError("local_epochs must be >= 0")
        return value

    @field_validator("alpha")
    @classmethod
    def _check_alpha(cls, value):
        return _unit_interval("alpha", value)

    @field_validator("beta")
    @classmethod
    def _check_beta(cls, value):
        if value <= 1:
            raise ValueError("beta must be > 1")
        return value

    @field_validator("max_grad_norm")
    @classmethod
    def _check_clip(cls, value):
        if value is not None:
            _positive("max_grad_norm", value)
        return value


class DatasetConfig(_Strict):
    kind: Literal["synth", "idx"] = "synth"
    classes: int = 4
    features: int = 16
    per_class: int = 600
    spread: float = 1.0
    test_fraction: float = 0.25
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    test_images_path: Optional[str] = None
    test_labels_path: Optional[str] = None

    @field_validator("classes")
    @classmethod
    def _check_classes(cls, value):
        if value < 2:
            raise ValueError("classes must be >= 2")
        return value

    @field_validator("features", "per_class", "spread")
    @classmethod
    def _check_positive(cls, value, info):
        return _positive(info.field_name, value)

    @field_validator("test_fraction")
    @classmethod
    def _check_fraction(cls, value):
        if value <= 0 or value >= 1:
            raise ValueError("test_fraction out of (0,1)")
        return value

    @model_validator(mode="after")
    def _check_paths(self):
        if self.kind == "idx" and not (self.images_path and self.labels_path):
            raise ValueError("idx datasets need images_path and labels_path")
        return self


class PartitionConfig(_Strict):
    scheme: Literal["iid", "label_limit"] = "iid"
    clients: int = 8
    n_local: int = 200
    labels_per_client: int = 2

    @field_validator("clients", "n_local", "labels_per_client")
    @classmethod
    def _check_positive(cls, value, info):
        return _positive(info.field_name, value)


class CorruptionSpec(_Strict):
    clients: List[int]
    mode: Literal["label_flip", "feature_noise"] = "label_flip"
    p: float = 0.9

    @field_validator("p")
    @classmethod
    def _check_p(cls, value):
        return _unit_interval("p", value)


class ScheduleConfig(_Strict):
    mode: Literal["sync", "async", "random"] = "sync"
    rounds: int = 30
    straggler_fraction: float = 0.0
    straggler_delay: float = 1.0
    active_clients: List[int] = []
    interactions_per_round: int = 1
    base_latency: float = 1.0
    latency_jitter: float = 0.0
    random_interactions: int = 20

    @field_validator("rounds", "random_interactions")
    @classmethod
    def _check_count(cls, value, info):
        if value < 1:
            raise ValueError(f"{info.field_name} must be >= 1")
        return value

    @field_validator("interactions_per_round")
    @classmethod
    def _check_multiplier(cls, value):
        if value < 1:
            raise ValueError("interactions_per_round must be >= 1")
        return value

    @field_validator("straggler_fraction")
    @classmethod
    def _check_stragglers(cls, value):
        return _unit_interval("straggler_fraction", value, upper_open=True)

    @field_validator("straggler_delay", "latency_jitter")
    @classmethod
    def _check_nonnegative(cls, value, info):
        if value < 0:
            raise ValueError(f"{info.field_name} must be >= 0")
        return value

    @field_validator("base_latency")
    @classmethod
    def _check_latency(cls, value):
        return _positive("base_latency", value)


class SimConfig(_Strict):
    """Everything one experiment needs"""
    seed: int
    runner: Literal["protocol", "fedavg", "single", "centralized"] = "protocol"
    output_dir: str = "runs/default"
    n_gen: int = 800
    target_accuracy: float = 0.7
    train: TrainConfig = TrainConfig()
    dataset: DatasetConfig = DatasetConfig()
    partition: PartitionConfig = PartitionConfig()
    corruption: List[CorruptionSpec] = []
    schedule: ScheduleConfig = ScheduleConfig()

    @field_validator("n_gen")
    @classmethod
    def _check_n_gen(cls, value):
        return _positive("n_gen", value)

    @field_validator("target_accuracy")
    @classmethod
    def _check_target(cls, value):
        return _unit_interval("target_accuracy", value)

    @model_validator(mode="after")
    def _check_cross_fields(self):
        k = self.partition.clients
        for spec in self.corruption:
            bad = [c for c in spec.clients if not 0 <= c < k]
            if bad:
                raise ValueError(f"corruption clients {bad} outside [0,{k})")
        bad = [c for c in self.schedule.active_clients if not 0 <= c < k]
        if bad:
            raise ValueError(f"active_clients {bad} outside [0,{k})")
        if self.partition.scheme == "label_limit" and self.dataset.kind == "synth" \
                and self.partition.labels_per_client > self.dataset.classes:
            raise ValueError("labels_per_client exceeds classes")
        if self.n_gen < 2 * self.dataset.classes:
            raise ValueError("n_gen must give every class at least 2 embeddings")
        return self

    def resolved_output_dir(self) -> Path:
        """Output directory with COGSHARE_OUTPUT_ROOT applied to relative paths"""
        path = Path(self.output_dir)
        root = os.getenv("COGSHARE_OUTPUT_ROOT", OUTPUT_ROOT or "")
        if root and not path.is_absolute():
            path = Path(root) / path
        return path


def _format_validation_error(err: ValidationError) -> str:
    messages = []
    for item in err.errors():
        loc = ".".join(str(part) for part in item["loc"]) or "config"
        msg = item["msg"].removeprefix("Value error, ")
        messages.append(f"{loc}: {msg}")
    return "; ".join(messages)


def parse_config(data: Dict[str, Any]) -> SimConfig:
    """Validate an already-parsed mapping into a SimConfig"""
    if "seed" not in data:
        raise ConfigError("seed missing")
    try:
        return SimConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_validation_error(err)) from None


def load_config(path) -> SimConfig:
    """
    Load, default and validate a TOML experiment configuration

    Args:
        path: TOML file path

    Returns:
        SimConfig: validated configuration

    Raises:
        ConfigError: unreadable file, TOML syntax error (with line number), missing seed,
            unknown key or out-of-range value
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as err:
        raise ConfigError(f"parse error: {err}") from None
    return parse_config(data)


def dump_config(cfg: SimConfig) -> str:
    """Serialize a configuration to JSON; SimConfig.model_validate_json inverts it"""
    return cfg.model_dump_json(indent=2)
