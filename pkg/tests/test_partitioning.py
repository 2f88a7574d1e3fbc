import numpy as np
import pytest

from tools.datasets import ClientDataset, Dataset, synth_blobs
from tools.partitioning import build_federated_data, corrupt, partition
from utils.errors import PartitionError


@pytest.fixture
def blobs() -> Dataset:
    return synth_blobs(10, 4, 100, 1.0, seed=5)


def test_iid_partition_sizes_without_replacement(blobs):
    parts = partition(blobs, "iid", clients=5, n_local=80, seed=1)
    assert [p.client_id for p in parts] == list(range(5))
    for p in parts:
        assert p.n_k == 80
        assert np.unique(p.indices).shape[0] == 80


def test_partitions_are_reproducible(blobs):
    a = partition(blobs, "label_limit", clients=4, n_local=50, seed=2, labels_per_client=2)
    b = partition(blobs, "label_limit", clients=4, n_local=50, seed=2, labels_per_client=2)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.indices, y.indices)


@pytest.mark.parametrize("labels_per_client", [2, 5])
def test_label_limit_gives_each_client_exactly_n_labels(blobs, labels_per_client):
    parts = partition(blobs, "label_limit", clients=20, n_local=60, seed=3, labels_per_client=labels_per_client)
    for p in parts:
        assert len(p.classes()) == labels_per_client
        assert p.n_k == 60


def test_label_limit_samples_with_replacement_when_a_pool_runs_out(blobs):
    parts = partition(blobs, "label_limit", clients=2, n_local=300, seed=4, labels_per_client=2)
    for p in parts:
        assert p.n_k == 300
        assert len(p.classes()) == 2


@pytest.mark.parametrize(
    "kwargs",
    [
        {"scheme": "iid", "clients": 2, "n_local": 5000},
        {"scheme": "label_limit", "clients": 2, "n_local": 50, "labels_per_client": 11},
        {"scheme": "label_limit", "clients": 2, "n_local": 1, "labels_per_client": 2},
        {"scheme": "dirichlet", "clients": 2, "n_local": 10},
        {"scheme": "iid", "clients": 0, "n_local": 10},
    ],
)
def test_infeasible_requests(blobs, kwargs):
    with pytest.raises(PartitionError, match="infeasible"):
        partition(blobs, seed=0, **kwargs)


def _flat_client(n: int, num_classes: int = 10) -> ClientDataset:
    rng = np.random.default_rng(0)
    ds = Dataset(rng.standard_normal((n, 3)), rng.integers(0, num_classes, n), num_classes)
    return ClientDataset(0, ds, np.arange(n))


def test_corrupt_p_zero_is_identity():
    cd = _flat_client(200)
    for mode in ("label_flip", "feature_noise"):
        out = corrupt(cd, mode, 0.0, seed=1)
        np.testing.assert_array_equal(out.labels, cd.labels)
        np.testing.assert_array_equal(out.features, cd.features)


def test_label_flip_p_one_changes_every_label():
    cd = _flat_client(500)
    out = corrupt(cd, "label_flip", 1.0, seed=1)
    assert np.all(out.labels != cd.labels)
    assert out.labels.min() >= 0 and out.labels.max() < 10


def test_label_flip_half_rate():
    cd = _flat_client(10_000)
    out = corrupt(cd, "label_flip", 0.5, seed=2)
    assert np.mean(out.labels != cd.labels) == pytest.approx(0.5, abs=0.02)


def test_corrupt_keeps_shapes_and_leaves_the_parent_alone():
    cd = _flat_client(300)
    original = cd.parent.features.copy()
    out = corrupt(cd, "feature_noise", 0.7, seed=3)
    assert out.features.shape == cd.features.shape
    assert out.labels.shape == cd.labels.shape
    np.testing.assert_array_equal(cd.parent.features, original)


def test_feature_noise_draws_from_each_column_marginal():
    cd = _flat_client(300)
    out = corrupt(cd, "feature_noise", 1.0, seed=4)
    for j in range(3):
        assert set(out.features[:, j]) <= set(cd.features[:, j])
    np.testing.assert_array_equal(out.labels, cd.labels)


def test_corrupt_rejects_bad_probability():
    with pytest.raises(ValueError):
        corrupt(_flat_client(10), "label_flip", 1.5, seed=0)


def test_build_federated_data_marks_corrupted_clients(make_config):
    cfg = make_config(corruption=[{"clients": [0, 2], "mode": "label_flip", "p": 1.0}])
    data = build_federated_data(cfg)
    clean = build_federated_data(make_config())
    assert data.unreliable == (0, 2)
    assert np.all(data.clients[0].labels != clean.clients[0].labels)
    np.testing.assert_array_equal(data.clients[1].labels, clean.clients[1].labels)
    assert data.testset.size == clean.testset.size
