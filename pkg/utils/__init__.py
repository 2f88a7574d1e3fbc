"""
Seeding, batching and array checks shared by every package
"""
from .patterns import *

__all__ = [
    'derive_seed',
    'make_rng',
    'minibatches',
    'one_hot',
    'require_finite',
    'split_counts',
]
