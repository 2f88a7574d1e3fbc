"""
Training losses over embedding batches, each returning its value and exact gradient
Contrastive and collaborative (cognitive module), Mahalanobis (descriptive module),
weighted cross-entropy (discriminative module)
"""
from dataclasses import dataclass
from typing import Dict, NamedTuple, Tuple

import numpy as np

from core.knowledge import KnowledgeTable
from core.linalg_gaussian import estimate_gaussian, sqrtm_psd, sqrtm_psd_backward
from core.neural import softmax_ce
from utils.errors import DimensionMismatchError, MissingCovarianceError, NeedPairError
from utils.patterns import require_finite


@dataclass(frozen=True)
class EmbeddingBatch:
    vectors: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)

    def __post_init__(self):
        vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if vectors.shape[0] < 1 or labels.shape[0] != vectors.shape[0]:
            raise DimensionMismatchError(f"{vectors.shape[0]} vectors vs {labels.shape[0]} labels")
        if labels.min() < 0:
            raise ValueError("labels must be nonnegative")
        require_finite(vectors, "embeddings")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


class CognitiveTerms(NamedTuple):
    loss: float
    grads: np.ndarray
    contrastive: float
    collaborative: float


def contrastive_batch(batch: EmbeddingBatch, margin: float) -> Tuple[float, np.ndarray]:
    """
    Mean pairwise contrastive loss over all unordered pairs i < j

    Same-label pairs cost their Euclidean distance, different-label pairs the hinge
    max(0, margin - distance). Subgradients are zero at the hinge kink and at coincident points.
    """
    n = batch.size
    if n < 2:
        raise NeedPairError()
    z = batch.vectors
    diffs = z[:, None, :] - z[None, :, :]
    dist = np.sqrt(np.sum(diffs ** 2, axis=2))
    same = batch.labels[:, None] == batch.labels[None, :]
    pairs = n * (n - 1) / 2.0

    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    per_pair = np.where(same, dist, np.maximum(0.0, margin - dist))
    loss = float(per_pair[upper].sum() / pairs)

    # coefficient c_ij so that grad_i = sum_j c_ij (z_i - z_j)
    safe = np.where(dist > 0, dist, 1.0)
    active_hinge = (~same) & (dist < margin)
    coef = np.where(same, 1.0 / safe, 0.0) - np.where(active_hinge, 1.0 / safe, 0.0)
    coef[dist <= 0] = 0.0
    np.fill_diagonal(coef, 0.0)
    coef /= pairs
    grads = coef.sum(axis=1)[:, None] * z - coef @ z
    return loss, grads


def collaborative_batch(batch: EmbeddingBatch, table: KnowledgeTable, ridge: float,
                        sample_form: bool = False) -> Tuple[float, np.ndarray]:
    """
    Sum over classes of ||mu_c - mu_R||^2 + ||Sigma_c^{1/2} - Sigma_R^{1/2}||_F^2

    Only classes with at least two samples in the batch and an initialized table entry contribute.
    Gradients flow through the batch mean and through the covariance square root.
    """
    if table.dim != batch.dim:
        raise DimensionMismatchError(f"batch dim {batch.dim} vs table dim {table.dim}")
    z = batch.vectors
    grads = np.zeros_like(z)
    loss = 0.0
    for class_id in np.unique(batch.labels):
        idx = np.flatnonzero(batch.labels == class_id)
        m = idx.shape[0]
        reference = table.usable(int(class_id))
        if m < 2 or reference is None:
            continue
        local = estimate_gaussian(z[idx], ridge, sample_form=sample_form)
        root_diff = sqrtm_psd(local.cov) - sqrtm_psd(reference.cov)
        mean_diff = local.mean - reference.mean
        loss += float(mean_diff @ mean_diff) + float(np.sum(root_diff ** 2))

        divisor = m - 1 if sample_form else m
        grad_cov = sqrtm_psd_backward(local.cov, 2.0 * root_diff)
        centered = z[idx] - local.mean
        grads[idx] += (2.0 / m) * mean_diff + (2.0 / divisor) * centered @ grad_cov
    return loss, grads


def cognitive_loss_terms(batch: EmbeddingBatch, table: KnowledgeTable, margin: float, ridge: float,
                         contrastive_weight: float = 1.0, collaborative_weight: float = 1.0,
                         sample_form: bool = False) -> CognitiveTerms:
    con_loss, con_grads = contrastive_batch(batch, margin)
    col_loss, col_grads = collaborative_batch(batch, table, ridge, sample_form=sample_form)
    return CognitiveTerms(
        loss=contrastive_weight * con_loss + collaborative_weight * col_loss,
        grads=contrastive_weight * con_grads + collaborative_weight * col_grads,
        contrastive=con_loss,
        collaborative=col_loss,
    )


def cognitive_loss(batch: EmbeddingBatch, table: KnowledgeTable, margin: float, ridge: float,
                   contrastive_weight: float = 1.0, collaborative_weight: float = 1.0) -> Tuple[float, np.ndarray]:
    """L_con + L_col with gradients summed (weights default to the unweighted sum)"""
    terms = cognitive_loss_terms(batch, table, margin, ridge, contrastive_weight, collaborative_weight)
    return terms.loss, terms.grads


def descriptive_batch(z_cog: np.ndarray, z_des: np.ndarray, labels: np.ndarray,
                      per_class_cov_inv: Dict[int, np.ndarray]) -> Tuple[float, np.ndarray]:
    """
    Sum of per-sample Mahalanobis distances between encoder and generator embeddings

    The encoder side is the target: the gradient is taken with respect to z_des only and is
    defined as zero where the two embeddings coincide.
    """
    z_cog = np.atleast_2d(np.asarray(z_cog, dtype=float))
    z_des = np.atleast_2d(np.asarray(z_des, dtype=float))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if z_cog.shape != z_des.shape or labels.shape[0] != z_cog.shape[0]:
        raise DimensionMismatchError(f"{z_cog.shape} vs {z_des.shape} with {labels.shape[0]} labels")
    diff = z_cog - z_des
    grads = np.zeros_like(z_des)
    loss = 0.0
    for class_id in np.unique(labels):
        precision = per_class_cov_inv.get(int(class_id))
        if precision is None:
            raise MissingCovarianceError(int(class_id))
        idx = np.flatnonzero(labels == class_id)
        weighted = diff[idx] @ precision
        dist = np.sqrt(np.maximum(np.sum(weighted * diff[idx], axis=1), 0.0))
        loss += float(dist.sum())
        safe = np.where(dist > 0, dist, 1.0)
        grads[idx] = np.where((dist > 0)[:, None], -weighted / safe[:, None], 0.0)
    return loss, grads


def discriminative_loss(logits_cog: np.ndarray, logits_des: np.ndarray, labels: np.ndarray,
                        alpha: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    alpha * CE(cognitive logits) + (1 - alpha) * CE(descriptive logits)

    Returns:
        (loss, gradient on cognitive logits, gradient on descriptive logits)
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha out of [0,1]")
    loss_cc, grad_cc = softmax_ce(logits_cog, labels)
    loss_cd, grad_cd = softmax_ce(logits_des, labels)
    return alpha * loss_cc + (1.0 - alpha) * loss_cd, alpha * grad_cc, (1.0 - alpha) * grad_cd
