"""Small dense-matrix toolkit: stable reductions, spectra, covariance, seeded randomness.

Matrices are plain float64 numpy arrays; spectra are 1-d arrays sorted in
descending order.
"""
from __future__ import annotations

import numpy as np


SYMMETRY_TOL = 1e-10
NEGATIVE_CLAMP = 1e-10


def as_matrix(A) -> np.ndarray:
    """Coerce to a finite 2-d float64 array."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-d matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def log_sum_exp(values) -> float:
    """``log(sum(exp(values)))`` with a max-shift so large inputs do not overflow."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty reduction")
    m = float(v.max())
    return m + float(np.log(np.sum(np.exp(v - m))))


def sym_eigenvalues(S) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, descending.

    LAPACK is used under every backend; the compiled Jacobi kernel meets the
    same accuracy contract but measured slower at every benchmark size.
    Tiny negative eigenvalues (within 1e-10 of zero, scaled by the matrix
    norm) are rounding noise and are clamped to 0.
    """
    S = as_matrix(S)
    if S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    w = np.sort(w)[::-1]
    w[(w < 0) & (w >= -NEGATIVE_CLAMP * scale)] = 0.0
    return w


def sym_eigh(S) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and matching eigenvector columns."""
    S = as_matrix(S)
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    order = np.argsort(w)[::-1]
    return w[order], V[:, order]


def singular_values(A) -> np.ndarray:
    """Singular values via the smaller of the two Gram matrices, descending."""
    A = as_matrix(A)
    G = A.T @ A if A.shape[1] <= A.shape[0] else A @ A.T
    lam = sym_eigenvalues(G)
    return np.sqrt(np.clip(lam, 0.0, None))


def covariance(X) -> np.ndarray:
    """Biased (1/m) covariance of row samples."""
    X = as_matrix(X)
    D = X - X.mean(axis=0, keepdims=True)
    C = D.T @ D / X.shape[0]
    return 0.5 * (C + C.T)


class RandomSource:
    """Seeded stream of random numbers.

    Not safe to share between concurrent callers; use :meth:`spawn` to derive
    independent child streams.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._seq = np.random.SeedSequence(self.seed)
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self, n: int = 1) -> list[RandomSource]:
        children = []
        for child_seq in self._seq.spawn(n):
            child = RandomSource.__new__(RandomSource)
            child.seed = self.seed
            child._seq = child_seq
            child.gen = np.random.Generator(np.random.PCG64(child_seq))
            children.append(child)
        return children

    def normal(self, size) -> np.ndarray:
        return self.gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def __repr__(self):
        return f"RandomSource(seed={self.seed})"


def gaussian_matrix(rng: RandomSource, rows: int, cols: int) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    return rng.normal((rows, cols))
