"""Prototype classifiers: fixed class-mean prototypes and two linear probes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import UNIT_TOL, EmbeddingBatch, class_means, normalize_rows
from .losses import ce_loss
from .numerics import RandomSource, as_matrix
from .optim import OptimConfig, UfmState, ufm_optimize

CLASSIFIER_KINDS = ("fixed_prototypes", "normalized_probe", "ce_probe")


@dataclass(frozen=True)
class Classifier:
    """Linear decision rule ``argmax_c (w_c . u + b_c)``.

    ``fixed_prototypes`` and ``normalized_probe`` are bias-free with unit rows;
    ``ce_probe`` may carry a bias and rows of any norm.
    """

    kind: str
    weights: np.ndarray
    bias: Optional[np.ndarray] = None
    tau: Optional[float] = None

    def __post_init__(self):
        if self.kind not in CLASSIFIER_KINDS:
            raise ValueError(f"unknown classifier kind {self.kind!r}")
        W = as_matrix(self.weights)
        object.__setattr__(self, "weights", W)
        if self.kind != "ce_probe":
            if self.bias is not None:
                raise ValueError(f"{self.kind} classifiers have no bias")
            if np.max(np.abs(np.linalg.norm(W, axis=1) - 1.0)) > UNIT_TOL:
                raise ValueError(f"{self.kind} classifiers need unit-norm rows")
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float64).ravel()
            if b.shape[0] != W.shape[0]:
                raise ValueError("bias length must equal the number of classes")
            object.__setattr__(self, "bias", b)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]


def fixed_prototypes(batch: EmbeddingBatch) -> Classifier:
    """Classifier whose weights are the renormalized class means of the (unit) embeddings.

    Costs one embedding evaluation per sample and no training iterations.
    """
    unit = batch if batch.normalized else batch.normalize()
    return Classifier("fixed_prototypes", normalize_rows(class_means(unit)))


def predict(clf: Classifier, batch) -> np.ndarray:
    """Predicted labels; ties go to the lowest class index."""
    F = batch.features if isinstance(batch, EmbeddingBatch) else as_matrix(batch)
    if F.shape[1] != clf.weights.shape[1]:
        raise ValueError(f"dimension mismatch: features d={F.shape[1]}, classifier d={clf.weights.shape[1]}")
    scores = F @ clf.weights.T
    if clf.bias is not None:
        scores = scores + clf.bias
    return np.argmax(scores, axis=1)


def accuracy(clf: Classifier, batch: EmbeddingBatch) -> float:
    return float(np.mean(predict(clf, batch) == batch.labels))


@dataclass
class ProbeConfig:
    """Probe training settings.

    The normalized probe runs the UFM optimizer with the features frozen
    (``steps``, ``base_lr``, ``warmup_steps`` as in :class:`OptimConfig`).
    The CE probe runs mini-batch SGD with momentum for ``epochs`` epochs and
    no weight decay.
    """

    tau: float = 0.1
    steps: int = 2000
    base_lr: float = 2.0
    warmup_steps: int = 200
    epochs: int = 50
    batch_size: int = 100
    ce_lr: float = 0.5
    momentum: float = 0.9
    seed: int = 0


def train_normalized_probe(batch: EmbeddingBatch, config: ProbeConfig = ProbeConfig()) -> Classifier:
    """Unit prototypes trained with the NormFace loss on frozen unit embeddings."""
    unit = batch if batch.normalized else batch.normalize()
    K, d = unit.num_classes, unit.dim
    rng = RandomSource(config.seed)
    W0 = normalize_rows(rng.normal((K, d)))
    opt = OptimConfig(
        loss_kind="normface", steps=config.steps, base_lr=config.base_lr,
        warmup_steps=config.warmup_steps, warmup_start_lr=0.01 * config.base_lr,
        seed=config.seed, eval_every=config.steps, num_classes=K, dim=d, tau=config.tau,
    )
    state, _ = ufm_optimize(opt, UfmState(unit.features, W0, unit.labels, config.tau), freeze_features=True)
    return Classifier("normalized_probe", normalize_rows(state.prototypes), tau=config.tau)


def train_ce_probe(batch: EmbeddingBatch, config: ProbeConfig = ProbeConfig()) -> Classifier:
    """Biased linear classifier trained with cross-entropy on raw frozen embeddings."""
    K, d = batch.num_classes, batch.dim
    rng = RandomSource(config.seed)
    W = rng.normal((K, d)) / np.sqrt(d)
    b = np.zeros(K)
    vW, vb = np.zeros_like(W), np.zeros_like(b)
    M = batch.size
    size = min(config.batch_size, M)
    for _ in range(config.epochs):
        order = rng.permutation(M)
        for start in range(0, M, size):
            idx = order[start:start + size]
            ev = ce_loss(EmbeddingBatch(batch.features[idx], batch.labels[idx], K), W, b)
            vW = config.momentum * vW + ev.grad_prototypes
            vb = config.momentum * vb + ev.grad_bias
            W = W - config.ce_lr * vW
            b = b - config.ce_lr * vb
    return Classifier("ce_probe", W, b)
