"""Hypersphere projection, class means, simplex ETFs and Gram matrices."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import RandomSource, as_matrix

DEGENERATE_NORM = 1e-12
UNIT_TOL = 1e-9


@dataclass(frozen=True)
class EmbeddingBatch:
    """M feature rows with integer labels in ``[0, num_classes)``."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    normalized: bool = False

    def __post_init__(self):
        feats = as_matrix(self.features)
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if labels.shape[0] != feats.shape[0]:
            raise ValueError(f"{feats.shape[0]} feature rows but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.normalized:
            norms = np.linalg.norm(feats, axis=1)
            if np.max(np.abs(norms - 1.0)) > UNIT_TOL:
                raise ValueError("batch flagged normalized but rows are not unit-norm")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes).astype(np.int64)

    def normalize(self) -> EmbeddingBatch:
        return EmbeddingBatch(normalize_rows(self.features), self.labels, self.num_classes, True)

    def permuted(self, perm) -> EmbeddingBatch:
        perm = np.asarray(perm)
        return EmbeddingBatch(self.features[perm], self.labels[perm], self.num_classes, self.normalized)


@dataclass(frozen=True)
class PrototypeSet:
    """K unit-norm class prototypes."""

    weights: np.ndarray

    def __post_init__(self):
        W = as_matrix(self.weights)
        norms = np.linalg.norm(W, axis=1)
        if np.max(np.abs(norms - 1.0)) > UNIT_TOL:
            raise ValueError("prototype rows must be unit-norm")
        object.__setattr__(self, "weights", W)

    @classmethod
    def from_raw(cls, W) -> PrototypeSet:
        return cls(normalize_rows(W))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class EtfFrame:
    directions: np.ndarray
    pairwise_target: float = field(init=False)

    def __post_init__(self):
        K = self.directions.shape[0]
        object.__setattr__(self, "pairwise_target", -1.0 / (K - 1))


def normalize_rows(A) -> np.ndarray:
    A = as_matrix(A)
    norms = np.linalg.norm(A, axis=1, keepdims=True)
    if np.any(norms < DEGENERATE_NORM):
        bad = int(np.flatnonzero(norms[:, 0] < DEGENERATE_NORM)[0])
        raise ValueError(f"degenerate direction in row {bad}")
    return A / norms


def class_means(batch: EmbeddingBatch) -> np.ndarray:
    """Per-class mean of the feature rows (not renormalized)."""
    counts = batch.counts()
    if np.any(counts == 0):
        raise ValueError(f"class without samples: {int(np.flatnonzero(counts == 0)[0])}")
    sums = np.zeros((batch.num_classes, batch.dim))
    np.add.at(sums, batch.labels, batch.features)
    return sums / counts[:, None]


def random_orthonormal(rng: RandomSource, d: int, k: int) -> np.ndarray:
    """d x k matrix with orthonormal columns (Gram-Schmidt on Gaussian columns)."""
    Q, R = np.linalg.qr(rng.normal((d, k)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def simplex_etf(K: int, d: int, rng: RandomSource) -> EtfFrame:
    """K unit vectors in R^d with pairwise inner products -1/(K-1), summing to zero."""
    if K < 2:
        raise ValueError("a simplex needs K >= 2")
    if d < K - 1:
        raise ValueError(f"dimension too small for simplex: d={d} < K-1={K - 1}")
    centered = np.sqrt(K / (K - 1)) * (np.eye(K) - np.ones((K, K)) / K)
    # Orthonormal basis of the sum-zero subspace (Helmert contrasts).
    basis = np.zeros((K, K - 1))
    for j in range(1, K):
        basis[:j, j - 1] = 1.0
        basis[j, j - 1] = -j
        basis[:, j - 1] /= np.sqrt(j * (j + 1))
    coords = centered @ basis
    frame = coords @ random_orthonormal(rng, d, K - 1).T
    if frame[0, 0] < 0:
        frame = -frame
    return EtfFrame(frame)


def is_simplex_etf(M, tol: float) -> dict:
    M = as_matrix(M)
    K = M.shape[0]
    if K < 2:
        raise ValueError("need at least two rows")
    G = M @ M.T
    off = ~np.eye(K, dtype=bool)
    report = {
        "max_norm_dev": float(np.max(np.abs(np.sqrt(np.diag(G)) - 1.0))),
        "max_gram_dev": float(np.max(np.abs(G[off] + 1.0 / (K - 1)))),
        "centering_norm": float(np.linalg.norm(M.sum(axis=0))),
    }
    report["pass"] = all(v <= tol for v in report.values())
    return report


def gram(A, trace_normalize: bool = False) -> np.ndarray:
    A = as_matrix(A)
    G = A @ A.T
    if trace_normalize:
        tr = np.trace(G)
        if tr <= 0:
            raise ValueError("zero trace: cannot trace-normalize")
        G = G / tr
    return G
