"""Prototype-contrast objectives with analytic gradients.

Feature gradients are ambient gradients with respect to the rows exactly as
given (the losses assume, but do not re-impose, unit rows). Prototype
gradients are taken with respect to *raw* prototype rows: the loss
normalizes ``w_c / ||w_c||`` internally and the returned gradient includes
the normalization Jacobian ``(I - w_hat w_hat^T) / ||w||``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import _backend
from .geometry import EmbeddingBatch, PrototypeSet, class_means, normalize_rows
from .numerics import as_matrix

MODE_NORMFACE = 0
MODE_NTCE = 1
MODE_NONL = 2


@dataclass
class LossEval:
    value: float
    grad_features: np.ndarray
    grad_prototypes: Optional[np.ndarray] = None
    grad_bias: Optional[np.ndarray] = None


def _check_tau(tau):
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return float(tau)


def _raw_weights(W):
    if isinstance(W, PrototypeSet):
        return W.weights
    return as_matrix(W)


def _check_dims(batch, W):
    if batch.dim != W.shape[1]:
        raise ValueError(f"dimension mismatch: features d={batch.dim}, prototypes d={W.shape[1]}")
    if W.shape[0] != batch.num_classes:
        raise ValueError(f"expected {batch.num_classes} prototype rows, got {W.shape[0]}")


def unnormalize_grad(W, grad_hat):
    """Pull a gradient w.r.t. normalized rows back to the raw rows."""
    norms = np.linalg.norm(W, axis=1, keepdims=True)
    W_hat = W / norms
    radial = np.sum(grad_hat * W_hat, axis=1, keepdims=True)
    return (grad_hat - radial * W_hat) / norms


def ce_loss(batch: EmbeddingBatch, W, b) -> LossEval:
    """Softmax cross-entropy on raw features with a biased linear classifier."""
    W = _raw_weights(W)
    _check_dims(batch, W)
    b = np.asarray(b, dtype=np.float64).ravel()
    if b.shape[0] != W.shape[0]:
        raise ValueError("bias length must equal the number of classes")
    Z = batch.features
    logits = Z @ W.T + b
    value, G = _backend.kernels.proto_contrast(
        np.ascontiguousarray(logits), batch.labels, batch.counts(), 1.0, MODE_NORMFACE
    )
    return LossEval(value, G @ W, G.T @ Z, G.sum(axis=0))


def _contrast(batch, W, tau, mode):
    tau = _check_tau(tau)
    W = _raw_weights(W)
    _check_dims(batch, W)
    W_hat = normalize_rows(W)
    U = batch.features
    S = U @ W_hat.T
    value, G = _backend.kernels.proto_contrast(
        np.ascontiguousarray(S), batch.labels, batch.counts(), 1.0 / tau, mode
    )
    return LossEval(value, G @ W_hat, unnormalize_grad(W, G.T @ U))


def normface_loss(batch: EmbeddingBatch, W, tau: float) -> LossEval:
    """Each sample contrasted against the K normalized prototypes."""
    return _contrast(batch, W, tau, MODE_NORMFACE)


def ntce_loss(batch: EmbeddingBatch, W, tau: float) -> LossEval:
    """Each sample's class prototype contrasted against all M batch features."""
    return _contrast(batch, W, tau, MODE_NTCE)


def nonl_loss(batch: EmbeddingBatch, W, tau: float) -> LossEval:
    """Like NTCE, but the denominator keeps only out-of-class samples."""
    if len(np.unique(batch.labels)) < 2:
        raise ValueError("no negatives for anchor: batch holds a single class")
    return _contrast(batch, W, tau, MODE_NONL)


def scl_loss(batch: EmbeddingBatch, tau: float) -> LossEval:
    """Supervised contrastive loss over the 2M rows (views already stacked by the caller)."""
    tau = _check_tau(tau)
    A = batch.features
    T = A @ A.T
    value, R = _backend.kernels.scl_contrast(
        np.ascontiguousarray(T), batch.labels, batch.counts(), 1.0 / tau
    )
    return LossEval(value, (R + R.T) @ A)


def _require_contrast(batch):
    if batch.num_classes < 2 or len(np.unique(batch.labels)) < 2:
        raise ValueError("no contrast possible: batch holds a single class")


def proto_loss(batch: EmbeddingBatch, tau: float) -> LossEval:
    """Softmax over in-batch class means, weighted by class counts.

    The class means are the raw averages of the rows; they are not put back
    on the sphere.
    """
    tau = _check_tau(tau)
    _require_contrast(batch)
    A = batch.features
    mu = class_means(batch)
    counts = batch.counts()
    S = A @ mu.T
    value, E = _backend.kernels.proto_softmax(np.ascontiguousarray(S), batch.labels, counts, 1.0 / tau)
    grad_mu = E.T @ A
    grad = E @ mu + grad_mu[batch.labels] / counts[batch.labels, None]
    return LossEval(value, grad)


def lstar_loss(batch: EmbeddingBatch, tau: float) -> float:
    """Common lower bound of the SCL and prototype losses.

    Raises when the log argument ``sum_c n_c e^{a.mu_c/tau} - e^{1/tau}`` is
    not positive for some anchor.
    """
    tau = _check_tau(tau)
    _require_contrast(batch)
    A = batch.features
    mu = class_means(batch)
    counts = batch.counts().astype(np.float64)
    L = A @ mu.T / tau
    rows = np.arange(batch.size)
    m = np.maximum(np.max(L + np.log(counts), axis=1), 1.0 / tau)
    den = np.sum(counts * np.exp(L - m[:, None]), axis=1) - np.exp(1.0 / tau - m)
    if np.any(~(den > 0)):
        bad = int(np.flatnonzero(~(den > 0))[0])
        raise ValueError(f"bound undefined at anchor {bad}: non-positive log argument")
    return float(np.mean(m + np.log(den) - L[rows, batch.labels]))


def _class_level(means, W, tau, n, exclude_self):
    tau = _check_tau(tau)
    means = as_matrix(means)
    W_hat = normalize_rows(_raw_weights(W))
    K = means.shape[0]
    if K < 2:
        raise ValueError("class-level loss needs K >= 2")
    if W_hat.shape != means.shape:
        raise ValueError("means and prototypes must have the same shape")
    L = W_hat @ means.T / tau + np.log(n)  # L[c, c'] = log n + w_c . mu_c' / tau
    if exclude_self:
        np.fill_diagonal(L, -np.inf)
    m = L.max(axis=1, keepdims=True)
    lse = (m + np.log(np.sum(np.exp(L - m), axis=1, keepdims=True)))[:, 0]
    align = np.sum(W_hat * means) / (K * tau)
    return float(-align + np.mean(lse))


def class_level_ntce(means, W, tau: float, n: int) -> float:
    return _class_level(means, W, tau, n, exclude_self=False)


def class_level_nonl(means, W, tau: float, n: int) -> float:
    return _class_level(means, W, tau, n, exclude_self=True)


def finite_diff_gradient(
    loss_fn: Callable[..., float], inputs: Sequence[np.ndarray] | np.ndarray, h: float = 1e-5
) -> list[np.ndarray]:
    """Central differences ``(f(x+h) - f(x-h)) / 2h`` for every coordinate of every input."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("step h must lie in [1e-7, 1e-3]")
    single = isinstance(inputs, np.ndarray)
    arrays = [np.array(x, dtype=np.float64, copy=True) for x in ([inputs] if single else inputs)]
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = loss_fn(*arrays)
            flat[k] = orig - h
            fm = loss_fn(*arrays)
            flat[k] = orig
            gflat[k] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


LOSSES = {
    "normface": normface_loss,
    "ntce": ntce_loss,
    "nonl": nonl_loss,
}
