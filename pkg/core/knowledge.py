"""
Knowledge table: the server's representative collaborative cognition per class
Held by the server, broadcast to clients by value
"""
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np

from core.linalg_gaussian import GaussianSummary
from utils.errors import DimensionMismatchError


@dataclass(frozen=True)
class KnowledgeEntry:
    mean: np.ndarray
    cov: np.ndarray
    initialized: bool = False
    last_winner: Optional[int] = None

    @property
    def trace(self) -> float:
        return float(np.trace(self.cov))

    def summary(self) -> GaussianSummary:
        return GaussianSummary(mean=self.mean, cov=self.cov, count=0)


class KnowledgeTable:
    """
    Map class -> (mu_R, Sigma_R, initialized, last_winner) with a uniform dimension
    Entries are immutable; updates replace them
    """

    def __init__(self, entries: Dict[int, KnowledgeEntry], dim: int):
        for c, entry in entries.items():
            if entry.mean.shape != (dim,) or entry.cov.shape != (dim, dim):
                raise DimensionMismatchError(f"class {c} entry does not have dimension {dim}")
        self.entries = dict(entries)
        self.dim = dim

    @classmethod
    def fresh(cls, num_classes: int, dim: int) -> "KnowledgeTable":
        return cls(
            {c: KnowledgeEntry(mean=np.zeros(dim), cov=np.eye(dim)) for c in range(num_classes)},
            dim,
        )

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    def usable(self, class_id: int) -> Optional[GaussianSummary]:
        """The reference Gaussian for a class, or None while it is uninitialized"""
        entry = self.entries.get(int(class_id))
        if entry is None or not entry.initialized:
            return None
        return entry.summary()

    def initialized_classes(self) -> List[int]:
        return sorted(c for c, e in self.entries.items() if e.initialized)

    def with_entry(self, class_id: int, **changes) -> "KnowledgeTable":
        entries = dict(self.entries)
        entries[class_id] = replace(entries[class_id], **changes)
        return KnowledgeTable(entries, self.dim)

    def copy(self) -> "KnowledgeTable":
        return KnowledgeTable(
            {c: replace(e, mean=e.mean.copy(), cov=e.cov.copy()) for c, e in self.entries.items()},
            self.dim,
        )

    def equals(self, other: "KnowledgeTable") -> bool:
        if self.dim != other.dim or self.entries.keys() != other.entries.keys():
            return False
        return all(
            a.initialized == b.initialized
            and a.last_winner == b.last_winner
            and np.array_equal(a.mean, b.mean)
            and np.array_equal(a.cov, b.cov)
            for a, b in ((self.entries[c], other.entries[c]) for c in self.entries)
        )
