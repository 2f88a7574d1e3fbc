"""
tools/partitioning.py - Federated partitioning and adversarial corruption of client data
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from config import DatasetConfig, SimConfig
from tools.datasets import ClientDataset, Dataset, load_idx, split_dataset, synth_blobs
from utils.errors import PartitionError
from utils.patterns import make_rng, split_counts

logger = logging.getLogger(__name__)

SCHEMES = ("iid", "label_limit")
CORRUPTION_MODES = ("label_flip", "feature_noise")


def partition(ds: Dataset, scheme: str, clients: int, n_local: int, seed: int,
              labels_per_client: int = 2) -> List[ClientDataset]:
    """
    Split a dataset across clients

    Args:
        ds: parent dataset
        scheme (str): "iid" (uniform sampling without replacement per client) or
            "label_limit" (each client gets labels_per_client random classes)
        clients (int): number of clients K
        n_local (int): samples per client
        seed (int): partition seed
        labels_per_client (int): N for the label_limit scheme

    Returns:
        List[ClientDataset]: one view per client, ordered by client id
    """
    if scheme not in SCHEMES:
        raise PartitionError(f"infeasible: unknown scheme '{scheme}'")
    if clients < 1 or n_local < 1:
        raise PartitionError("infeasible: need at least one client and one sample each")
    rng = make_rng(seed, "partition", scheme)

    if scheme == "iid":
        if n_local > ds.size:
            raise PartitionError(f"infeasible: {n_local} samples per client from {ds.size}")
        return [
            ClientDataset(k, ds, np.sort(rng.choice(ds.size, size=n_local, replace=False)))
            for k in range(clients)
        ]

    if labels_per_client > ds.num_classes:
        raise PartitionError(f"infeasible: {labels_per_client} labels from {ds.num_classes} classes")
    if n_local < labels_per_client:
        raise PartitionError(f"infeasible: {n_local} samples cannot cover {labels_per_client} labels")
    pools = {c: np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)}
    result = []
    for k in range(clients):
        candidates = [c for c in range(ds.num_classes) if pools[c].size > 0]
        if len(candidates) < labels_per_client:
            raise PartitionError("infeasible: too few non-empty classes")
        chosen = np.sort(rng.choice(candidates, size=labels_per_client, replace=False))
        picks = []
        for class_id, count in zip(chosen, split_counts(n_local, labels_per_client)):
            pool = pools[int(class_id)]
            with_replacement = count > pool.size
            if with_replacement:
                logger.warning("Client %d: class %d pool of %d sampled with replacement for %d draws",
                               k, class_id, pool.size, count)
            picks.append(rng.choice(pool, size=count, replace=with_replacement))
        result.append(ClientDataset(k, ds, np.sort(np.concatenate(picks))))
    return result


def corrupt(cd: ClientDataset, mode: str, p: float, seed: int) -> ClientDataset:
    """
    Corrupt a client's data into a private copy

    label_flip: each label is replaced with probability p by a uniformly drawn different class.
    feature_noise: each feature value is replaced with probability p by a draw from that
    feature's empirical marginal over the client's data.
    """
    if mode not in CORRUPTION_MODES:
        raise ValueError(f"unknown corruption mode '{mode}'")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p out of [0,1]")
    rng = make_rng(seed, "corrupt", cd.client_id, mode)
    features = cd.features.copy()
    labels = cd.labels.copy()
    n, f = features.shape

    if mode == "label_flip":
        flip = rng.random(n) < p
        shift = rng.integers(1, cd.num_classes, size=n)
        labels[flip] = (labels[flip] + shift[flip]) % cd.num_classes
        logger.info("Client %d: flipped %d of %d labels", cd.client_id, int(flip.sum()), n)
    else:
        replace = rng.random((n, f)) < p
        donors = rng.integers(0, n, size=(n, f))
        resampled = features[donors, np.arange(f)[None, :]]
        features = np.where(replace, resampled, features)
        logger.info("Client %d: replaced %d of %d feature values", cd.client_id, int(replace.sum()), n * f)

    private = Dataset(features, labels, cd.num_classes)
    return ClientDataset(cd.client_id, private, np.arange(n))


@dataclass(frozen=True)
class FederatedData:
    """Client partitions, the shared IID test set and the ids of corrupted clients"""
    clients: Tuple[ClientDataset, ...]
    testset: Dataset
    unreliable: Tuple[int, ...] = ()

    @property
    def num_classes(self) -> int:
        return self.testset.num_classes

    @property
    def feature_dim(self) -> int:
        return self.testset.feature_dim


def _load_source(cfg: DatasetConfig, seed: int) -> Tuple[Dataset, Dataset]:
    if cfg.kind == "synth":
        full = synth_blobs(cfg.classes, cfg.features, cfg.per_class, cfg.spread, seed)
        return split_dataset(full, cfg.test_fraction, seed)
    train = load_idx(cfg.images_path, cfg.labels_path)
    if cfg.test_images_path and cfg.test_labels_path:
        return train, load_idx(cfg.test_images_path, cfg.test_labels_path, train.num_classes)
    return split_dataset(train, cfg.test_fraction, seed)


def build_federated_data(cfg: SimConfig) -> FederatedData:
    """
    Materialize the datasets an experiment configuration describes

    Raises:
        DataFormatError: unreadable or malformed IDX files
        PartitionError: infeasible partition request
    """
    train, test = _load_source(cfg.dataset, cfg.seed)
    parts = partition(train, cfg.partition.scheme, cfg.partition.clients, cfg.partition.n_local,
                      cfg.seed, cfg.partition.labels_per_client)
    unreliable = set()
    for spec in cfg.corruption:
        for client_id in spec.clients:
            parts[client_id] = corrupt(parts[client_id], spec.mode, spec.p, cfg.seed)
            unreliable.add(client_id)
    logger.info("Prepared %d clients (%d corrupted), %d test samples", len(parts), len(unreliable), test.size)
    return FederatedData(clients=tuple(parts), testset=test, unreliable=tuple(sorted(unreliable)))
