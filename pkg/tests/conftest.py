"""
Shared fixtures: a small experiment that runs in well under a second per round
"""
import copy
from typing import Any, Dict

import numpy as np
import pytest

from config import SimConfig, parse_config
from tools.partitioning import FederatedData, build_federated_data

BASE_CONFIG: Dict[str, Any] = {
    "seed": 7,
    "n_gen": 60,
    "train": {"batch_size": 16, "hidden_dim": 16, "embed_dim": 4, "noise_dim": 4},
    "dataset": {"classes": 3, "features": 6, "per_class": 40},
    "partition": {"clients": 3, "n_local": 30},
    "schedule": {"rounds": 2},
}


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def small_config(**overrides) -> SimConfig:
    return parse_config(_merge(BASE_CONFIG, overrides))


@pytest.fixture
def make_config():
    return small_config


@pytest.fixture
def small_cfg() -> SimConfig:
    return small_config()


@pytest.fixture
def small_data(small_cfg) -> FederatedData:
    return build_federated_data(small_cfg)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_pd(rng: np.random.Generator, d: int, floor: float = 0.1) -> np.ndarray:
    a = rng.standard_normal((d, d))
    return a @ a.T + floor * np.eye(d)


def relative_error(numeric: np.ndarray, analytic: np.ndarray) -> float:
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-8)
    return float(np.linalg.norm(numeric - analytic) / scale)


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function over every entry of x"""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        up = fn(x)
        x[idx] = orig - eps
        down = fn(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2 * eps)
    return grad
