"""
Tools package for the knowledge-sharing simulator
Exports dataset and partitioning helpers; the dispatcher, exports and checkpoint modules are imported directly
"""
from .datasets import ClientDataset, Dataset, export_csv, load_idx, split_dataset, synth_blobs
from .partitioning import FederatedData, build_federated_data, corrupt, partition

__all__ = [
    'ClientDataset',
    'Dataset',
    'FederatedData',
    'build_federated_data',
    'corrupt',
    'export_csv',
    'load_idx',
    'partition',
    'split_dataset',
    'synth_blobs',
]
