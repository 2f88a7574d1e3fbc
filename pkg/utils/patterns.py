"""
Common numeric patterns and helpers
Seed derivation, minibatching, one-hot encoding and finiteness checks used across the system
"""
import zlib
from typing import Iterator, Tuple, Union

import numpy as np

from utils.errors import LabelRangeError, NonFiniteError

SeedKey = Union[int, str]


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


def derive_seed(seed: int, *keys: SeedKey) -> int:
    """
    Derive an independent child seed from a root seed and a path of keys

    Args:
        seed (int): Root seed of the run
        *keys: Labels naming the consumer, e.g. ("client", 3, 12)

    Returns:
        int: A 63-bit seed that depends only on (seed, keys)
    """
    entropy = [int(seed) & 0xFFFFFFFF] + [_key_to_int(k) & 0xFFFFFFFF for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def make_rng(seed: int, *keys: SeedKey) -> np.random.Generator:
    """Create a generator seeded from derive_seed(seed, *keys)"""
    return np.random.default_rng(derive_seed(seed, *keys))


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Yield shuffled index batches; the last short batch is kept"""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    check_labels(labels, num_classes)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def check_labels(labels: np.ndarray, num_classes: int) -> None:
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelRangeError(num_classes)


def require_finite(array: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"non-finite {what}")


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def split_counts(total: int, parts: int) -> Tuple[int, ...]:
    """Split total into parts near-equal counts, remainder to the first parts"""
    base, extra = divmod(total, parts)
    return tuple(base + (1 if i < extra else 0) for i in range(parts))
