import numpy as np
import pytest

from conftest import numeric_grad, random_pd, relative_error
from core.knowledge import KnowledgeTable
from core.linalg_gaussian import collaborative_value, estimate_gaussian
from core.losses import (
    EmbeddingBatch,
    cognitive_loss,
    collaborative_batch,
    contrastive_batch,
    descriptive_batch,
    discriminative_loss,
)
from utils.errors import DimensionMismatchError, MissingCovarianceError, NeedPairError


def _seeded_table(rng, num_classes: int, dim: int, initialized=None) -> KnowledgeTable:
    table = KnowledgeTable.fresh(num_classes, dim)
    for c in range(num_classes) if initialized is None else initialized:
        table = table.with_entry(c, mean=rng.standard_normal(dim), cov=random_pd(rng, dim, floor=0.3),
                                 initialized=True, last_winner=0)
    return table


def test_contrastive_same_label_pair_costs_distance():
    loss, grads = contrastive_batch(EmbeddingBatch([[0.0, 0.0], [3.0, 4.0]], [1, 1]), margin=1.0)
    assert loss == pytest.approx(5.0)
    np.testing.assert_allclose(grads, [[-0.6, -0.8], [0.6, 0.8]])


def test_contrastive_different_labels_hinge():
    close, _ = contrastive_batch(EmbeddingBatch([[0.0], [0.4]], [0, 1]), margin=1.0)
    far, far_grads = contrastive_batch(EmbeddingBatch([[0.0], [2.0]], [0, 1]), margin=1.0)
    assert close == pytest.approx(0.6)
    assert far == 0.0
    np.testing.assert_array_equal(far_grads, 0.0)


def test_contrastive_is_mean_over_pairs():
    batch = EmbeddingBatch([[0.0], [1.0], [3.0]], [0, 0, 0])
    loss, _ = contrastive_batch(batch, margin=1.0)
    assert loss == pytest.approx((1.0 + 3.0 + 2.0) / 3.0)


def test_contrastive_coincident_points_have_zero_gradient():
    loss, grads = contrastive_batch(EmbeddingBatch([[1.0, 1.0], [1.0, 1.0]], [2, 2]), margin=1.0)
    assert loss == 0.0
    np.testing.assert_array_equal(grads, 0.0)


def test_contrastive_is_invariant_to_batch_order(rng):
    z = rng.standard_normal((9, 4))
    labels = rng.integers(0, 3, 9)
    perm = rng.permutation(9)
    loss, grads = contrastive_batch(EmbeddingBatch(z, labels), margin=1.5)
    shuffled_loss, shuffled_grads = contrastive_batch(EmbeddingBatch(z[perm], labels[perm]), margin=1.5)
    assert shuffled_loss == pytest.approx(loss)
    np.testing.assert_allclose(shuffled_grads, grads[perm], atol=1e-12)


def test_contrastive_needs_a_pair():
    with pytest.raises(NeedPairError, match="need a pair"):
        contrastive_batch(EmbeddingBatch([[1.0, 2.0]], [0]), margin=1.0)


SIZES = [(n, d) for n in (2, 8, 32) for d in (2, 8)]


def _away_from_kinks(rng, n: int, d: int, margin: float) -> np.ndarray:
    """Embeddings whose pairwise distances stay clear of 0 and of the margin"""
    while True:
        z = rng.standard_normal((n, d))
        gaps = np.linalg.norm(z[:, None] - z[None], axis=2)[np.triu_indices(n, 1)]
        if gaps.min() > 1e-3 and np.abs(gaps - margin).min() > 1e-3:
            return z


@pytest.mark.parametrize("n, d", SIZES)
def test_contrastive_gradient_matches_finite_differences(rng, n, d):
    for _ in range(20):
        labels = rng.integers(0, 3, n)
        z = _away_from_kinks(rng, n, d, 1.5)
        _, grads = contrastive_batch(EmbeddingBatch(z, labels), margin=1.5)
        numeric = numeric_grad(lambda v: contrastive_batch(EmbeddingBatch(v, labels), 1.5)[0], z.copy())
        assert relative_error(numeric, grads) < 1e-3


def test_collaborative_skips_uninitialized_classes(rng):
    batch = EmbeddingBatch(rng.standard_normal((6, 3)), [0, 0, 0, 1, 1, 1])
    loss, grads = collaborative_batch(batch, KnowledgeTable.fresh(2, 3), ridge=1e-4)
    assert loss == 0.0
    np.testing.assert_array_equal(grads, 0.0)


def test_collaborative_skips_singleton_classes(rng):
    table = _seeded_table(rng, 2, 3)
    batch = EmbeddingBatch(rng.standard_normal((4, 3)), [0, 0, 0, 1])
    _, grads = collaborative_batch(batch, table, ridge=1e-4)
    np.testing.assert_array_equal(grads[3], 0.0)


def test_collaborative_value_matches_per_class_sum(rng):
    table = _seeded_table(rng, 2, 3)
    z = rng.standard_normal((10, 3))
    labels = np.array([0] * 5 + [1] * 5)
    loss, _ = collaborative_batch(EmbeddingBatch(z, labels), table, ridge=1e-3)
    expected = sum(
        collaborative_value(estimate_gaussian(z[labels == c], 1e-3), table.usable(c)) for c in (0, 1)
    )
    assert loss == pytest.approx(expected)


@pytest.mark.parametrize("sample_form", [False, True])
@pytest.mark.parametrize("n, d", SIZES)
def test_collaborative_gradient_matches_finite_differences(rng, sample_form, n, d):
    for _ in range(20):
        table = _seeded_table(rng, 3, d, initialized=[0, 2])
        labels = rng.integers(0, 3, n)
        z = rng.standard_normal((n, d))
        _, grads = collaborative_batch(EmbeddingBatch(z, labels), table, 1e-2, sample_form=sample_form)
        numeric = numeric_grad(
            lambda v: collaborative_batch(EmbeddingBatch(v, labels), table, 1e-2, sample_form=sample_form)[0],
            z.copy(),
        )
        assert relative_error(numeric, grads) < 1e-3


def test_collaborative_moves_with_a_common_translation(rng):
    table = _seeded_table(rng, 3, 4)
    z = rng.standard_normal((15, 4))
    labels = np.array([0, 1, 2] * 5)
    offset = rng.normal(scale=10.0, size=4)
    shifted = table
    for c, entry in table.entries.items():
        shifted = shifted.with_entry(c, mean=entry.mean + offset)
    loss, grads = collaborative_batch(EmbeddingBatch(z, labels), table, ridge=1e-3)
    moved_loss, moved_grads = collaborative_batch(EmbeddingBatch(z + offset, labels), shifted, ridge=1e-3)
    assert moved_loss == pytest.approx(loss, rel=1e-9)
    np.testing.assert_allclose(moved_grads, grads, atol=1e-9)


def test_collaborative_vanishes_when_the_batch_matches_the_table(rng):
    z = rng.standard_normal((12, 3))
    labels = np.array([0] * 6 + [1] * 6)
    table = KnowledgeTable.fresh(2, 3)
    for c in (0, 1):
        local = estimate_gaussian(z[labels == c], 1e-3)
        table = table.with_entry(c, mean=local.mean, cov=local.cov, initialized=True, last_winner=1)
    loss, grads = collaborative_batch(EmbeddingBatch(z, labels), table, ridge=1e-3)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.linalg.norm(grads) < 1e-8


def test_collaborative_rejects_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatchError):
        collaborative_batch(EmbeddingBatch(rng.standard_normal((4, 3)), [0, 0, 1, 1]),
                            KnowledgeTable.fresh(2, 5), ridge=1e-4)


def test_cognitive_loss_is_the_sum(rng):
    table = _seeded_table(rng, 2, 3)
    batch = EmbeddingBatch(rng.standard_normal((8, 3)), [0, 1] * 4)
    loss, grads = cognitive_loss(batch, table, margin=1.0, ridge=1e-3)
    con, con_g = contrastive_batch(batch, 1.0)
    col, col_g = collaborative_batch(batch, table, 1e-3)
    assert loss == pytest.approx(con + col)
    np.testing.assert_allclose(grads, con_g + col_g)


def test_descriptive_with_identity_precision_is_euclidean():
    z_cog = np.array([[0.0, 0.0], [1.0, 1.0]])
    z_des = np.array([[3.0, 4.0], [1.0, 1.0]])
    loss, grads = descriptive_batch(z_cog, z_des, np.array([0, 1]), {0: np.eye(2), 1: np.eye(2)})
    assert loss == pytest.approx(5.0)
    np.testing.assert_allclose(grads[0], [0.6, 0.8])
    np.testing.assert_array_equal(grads[1], 0.0)


@pytest.mark.parametrize("n, d", SIZES)
def test_descriptive_gradient_matches_finite_differences(rng, n, d):
    for _ in range(20):
        labels = rng.integers(0, 2, n)
        precisions = {c: np.linalg.inv(random_pd(rng, d, floor=0.5)) for c in (0, 1)}
        z_cog = rng.standard_normal((n, d))
        z_des = rng.standard_normal((n, d))
        _, grads = descriptive_batch(z_cog, z_des, labels, precisions)
        numeric = numeric_grad(lambda v: descriptive_batch(z_cog, v, labels, precisions)[0], z_des.copy())
        assert relative_error(numeric, grads) < 1e-3


def test_descriptive_requires_every_class_covariance():
    with pytest.raises(MissingCovarianceError):
        descriptive_batch(np.zeros((2, 2)), np.ones((2, 2)), np.array([0, 1]), {0: np.eye(2)})


def test_discriminative_alpha_weights_the_two_heads(rng):
    logits_cog = rng.standard_normal((4, 3))
    logits_des = rng.standard_normal((4, 3))
    labels = np.array([0, 1, 2, 0])
    only_cog, _, grad_des = discriminative_loss(logits_cog, logits_des, labels, alpha=1.0)
    np.testing.assert_array_equal(grad_des, 0.0)
    mixed, _, _ = discriminative_loss(logits_cog, logits_des, labels, alpha=0.9)
    only_des, _, _ = discriminative_loss(logits_cog, logits_des, labels, alpha=0.0)
    assert mixed == pytest.approx(0.9 * only_cog + 0.1 * only_des)


@pytest.mark.parametrize("n, num_classes", SIZES)
def test_discriminative_gradient_matches_finite_differences(rng, n, num_classes):
    for _ in range(20):
        labels = rng.integers(0, num_classes, n)
        lc, ld = rng.standard_normal((n, num_classes)), rng.standard_normal((n, num_classes))
        _, grad_cog, grad_des = discriminative_loss(lc, ld, labels, alpha=0.9)
        num_cog = numeric_grad(lambda v: discriminative_loss(v, ld, labels, 0.9)[0], lc.copy())
        num_des = numeric_grad(lambda v: discriminative_loss(lc, v, labels, 0.9)[0], ld.copy())
        assert relative_error(num_cog, grad_cog) < 1e-3
        assert relative_error(num_des, grad_des) < 1e-3


def test_discriminative_rejects_alpha_out_of_range():
    with pytest.raises(ValueError, match=r"alpha out of \[0,1\]"):
        discriminative_loss(np.zeros((1, 2)), np.zeros((1, 2)), np.array([0]), alpha=1.5)
