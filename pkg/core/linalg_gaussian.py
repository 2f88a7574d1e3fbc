"""
Gaussian knowledge summaries and the symmetric PSD linear algebra behind them
Matrix square roots by symmetric eigendecomposition, Bures-Wasserstein distance,
the collaborative (commuting-case) distance, Gaussian transport maps and Mahalanobis distance
"""
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from utils.errors import (
    DimensionMismatchError,
    IllConditionedError,
    NoSamplesError,
    NotSymmetricError,
)
from utils.patterns import symmetrize

SYMMETRY_TOL = 1e-8
# relative eigenvalue floor below which a transport source counts as singular
SINGULAR_TOL = 1e-12

VectorsLike = Union[np.ndarray, Sequence[Sequence[float]]]


@dataclass(frozen=True)
class GaussianSummary:
    """
    Per-class knowledge: mean vector, covariance matrix and the number of samples summarized
    """
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatchError(f"mean {mean.shape} vs cov {cov.shape}")
        _check_symmetric(cov)
        if self.count < 0:
            raise ValueError("count must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.cov))


def _as_matrix(vectors: VectorsLike) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        if vectors.size == 0:
            raise NoSamplesError()
        return np.atleast_2d(vectors.astype(float))
    rows = [np.ravel(np.asarray(v, dtype=float)) for v in vectors]
    if not rows:
        raise NoSamplesError()
    if len({row.shape[0] for row in rows}) != 1:
        raise DimensionMismatchError("vectors of differing length")
    return np.vstack(rows)


def estimate_gaussian(vectors: VectorsLike, ridge: float, sample_form: bool = False) -> GaussianSummary:
    """
    Summarize vectors by their mean and ridged covariance

    Args:
        vectors: m vectors of dimension d (array of shape (m, d) or a list of vectors)
        ridge (float): gamma added to the covariance diagonal
        sample_form (bool): divide by m-1 instead of m (off by default)

    Returns:
        GaussianSummary: mean, covariance + ridge*I and count m
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    z = _as_matrix(vectors)
    m, d = z.shape
    mean = z.mean(axis=0)
    centered = z - mean
    divisor = m - 1 if (sample_form and m > 1) else m
    cov = symmetrize(centered.T @ centered / divisor) + ridge * np.eye(d)
    return GaussianSummary(mean=mean, cov=cov, count=m)


def _check_symmetric(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got {S.shape}")
    asym = np.linalg.norm(S - S.T)
    if asym > SYMMETRY_TOL * max(1.0, np.linalg.norm(S)):
        raise NotSymmetricError(asym)
    return symmetrize(S)


def _eigh_clamped(S: np.ndarray):
    eigvals, eigvecs = np.linalg.eigh(S)
    return np.maximum(eigvals, 0.0), eigvecs


def sqrtm_psd(S: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix; negative eigenvalues are clamped to zero"""
    eigvals, eigvecs = _eigh_clamped(_check_symmetric(S))
    return symmetrize((eigvecs * np.sqrt(eigvals)) @ eigvecs.T)


def sqrtm_psd_backward(S: np.ndarray, grad_root: np.ndarray) -> np.ndarray:
    """
    Pull a gradient on S^{1/2} back to a gradient on S

    Uses the divided-difference kernel of the square root on the eigenvalues of S,
    K_ij = 1 / (sqrt(l_i) + sqrt(l_j)), so dL/dS = V (K o (V^T G V)) V^T for symmetric G.
    """
    eigvals, eigvecs = _eigh_clamped(_check_symmetric(S))
    roots = np.sqrt(eigvals)
    denom = roots[:, None] + roots[None, :]
    kernel = np.divide(1.0, denom, out=np.zeros_like(denom), where=denom > 0)
    inner = eigvecs.T @ symmetrize(grad_root) @ eigvecs
    return symmetrize(eigvecs @ (kernel * inner) @ eigvecs.T)


def _check_pair(a: GaussianSummary, b: GaussianSummary) -> None:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"{a.dim} vs {b.dim}")


def bures_w2_sq(a: GaussianSummary, b: GaussianSummary) -> float:
    """Squared 2-Wasserstein distance between N(a.mean, a.cov) and N(b.mean, b.cov)"""
    _check_pair(a, b)
    root_a = sqrtm_psd(a.cov)
    cross = sqrtm_psd(symmetrize(root_a @ b.cov @ root_a))
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    cov_term = float(np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))
    return max(0.0, mean_term + cov_term)


def collaborative_value(a: GaussianSummary, r: GaussianSummary) -> float:
    """||mu_a - mu_r||^2 + ||cov_a^{1/2} - cov_r^{1/2}||_F^2, the commuting-case W2"""
    _check_pair(a, r)
    mean_term = float(np.sum((a.mean - r.mean) ** 2))
    root_diff = sqrtm_psd(a.cov) - sqrtm_psd(r.cov)
    return mean_term + float(np.sum(root_diff ** 2))


def transport_map(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """
    Linear Monge map between centered Gaussians: T with T src T = dst

    T = src^{-1/2} (src^{1/2} dst src^{1/2})^{1/2} src^{-1/2}
    """
    src = _check_symmetric(src)
    dst = _check_symmetric(dst)
    if src.shape != dst.shape:
        raise DimensionMismatchError(f"{src.shape} vs {dst.shape}")
    eigvals, eigvecs = np.linalg.eigh(src)
    if eigvals.min() <= SINGULAR_TOL * max(1.0, float(eigvals.max())):
        raise IllConditionedError(float(eigvals.min()))
    roots = np.sqrt(eigvals)
    src_half = (eigvecs * roots) @ eigvecs.T
    src_inv_half = (eigvecs / roots) @ eigvecs.T
    middle = sqrtm_psd(symmetrize(src_half @ dst @ src_half))
    return symmetrize(src_inv_half @ middle @ src_inv_half)


def mahalanobis(z1: np.ndarray, z2: np.ndarray, cov_inv: np.ndarray) -> float:
    """sqrt((z1 - z2)^T cov_inv (z1 - z2))"""
    z1 = np.asarray(z1, dtype=float).reshape(-1)
    z2 = np.asarray(z2, dtype=float).reshape(-1)
    if z1.shape != z2.shape:
        raise DimensionMismatchError(f"{z1.shape} vs {z2.shape}")
    diff = z1 - z2
    cov_inv = np.asarray(cov_inv, dtype=float)
    if cov_inv.shape != (diff.shape[0], diff.shape[0]):
        raise DimensionMismatchError(f"vector {diff.shape} vs precision {cov_inv.shape}")
    return float(np.sqrt(max(0.0, float(diff @ cov_inv @ diff))))
