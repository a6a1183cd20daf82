"""A small feed-forward encoder with a normalizing head, trained by manual backprop.

Serves as the desk-scale stand-in for a deep network: Gaussian blobs go in,
unit-norm embeddings come out, and any of the contrastive losses can be
trained end to end with SGD and momentum.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _backend
from .geometry import DEGENERATE_NORM, EmbeddingBatch, normalize_rows
from .losses import ce_loss, nonl_loss, normface_loss, ntce_loss, proto_loss, scl_loss
from .metrics import nc_report
from .numerics import RandomSource
from .optim import LOSS_KINDS, RunTrace, cosine_schedule

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``(input_dim, hidden..., d)`` and one activation per hidden layer.

    The last affine layer is linear and feeds the unit-normalization head.
    With ``head=False`` the last affine layer is dropped and the final hidden
    representation (width ``widths[-2]``) is normalized directly.
    """

    widths: tuple
    activations: Optional[tuple] = None
    head: bool = True

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least one layer (two widths)")
        if min(widths) < 1:
            raise ValueError("layer widths must be positive")
        acts = self.activations
        if acts is None:
            acts = ("tanh",) * (len(widths) - 2)
        acts = tuple(acts)
        if len(acts) != len(widths) - 2:
            raise ValueError(f"expected {len(widths) - 2} hidden activations, got {len(acts)}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}; expected one of {ACTIVATIONS}")
        if not self.head and len(widths) < 3:
            raise ValueError("no-head mode needs a hidden layer")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activations", acts)
        if self.output_dim < 2:
            raise ValueError("embedding dimension must be >= 2")

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def active_layers(self) -> int:
        return self.num_layers if self.head else self.num_layers - 1

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1] if self.head else self.widths[-2]


def init_params(spec: MlpSpec, rng: RandomSource) -> list:
    """``[(W, b), ...]`` with ``W`` of shape (fan_in, fan_out), scaled 1/sqrt(fan_in)."""
    params = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        W = rng.normal((fan_in, fan_out)) / math.sqrt(fan_in)
        params.append((W, np.zeros(fan_out)))
    return params


def _fingerprint(params) -> str:
    h = hashlib.blake2b(digest_size=16)
    for W, b in params:
        h.update(np.ascontiguousarray(W).tobytes())
        h.update(np.ascontiguousarray(b).tobytes())
    return h.hexdigest()


def _check_params(spec, params):
    if len(params) != spec.num_layers:
        raise ValueError(f"expected {spec.num_layers} layers of parameters, got {len(params)}")
    for k, (W, b) in enumerate(params):
        shape = (spec.widths[k], spec.widths[k + 1])
        if W.shape != shape or b.shape != (shape[1],):
            raise ValueError(f"layer {k}: parameter shapes {W.shape}/{b.shape} do not match {shape}")


@dataclass
class ForwardCache:
    spec: MlpSpec
    token: str
    inputs: list  # input to each active layer
    pre: list  # pre-activation of each active layer
    z: np.ndarray  # representation before normalization
    norms: Optional[np.ndarray]  # row norms of z, None in raw mode


def forward(spec: MlpSpec, params, X, normalize: bool = True):
    """Embed the rows of ``X``; returns ``(embeddings, cache)``.

    Rows are unit-normalized unless ``normalize`` is False (raw mode, used
    for CE). Rows are processed independently.
    """
    _check_params(spec, params)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"expected inputs with {spec.input_dim} columns, got shape {X.shape}")
    h = X
    inputs, pre = [], []
    for k in range(spec.active_layers):
        W, b = params[k]
        inputs.append(h)
        a = h @ W + b
        pre.append(a)
        if k < spec.num_layers - 1:
            h = np.tanh(a) if spec.activations[k] == "tanh" else np.maximum(a, 0.0)
        else:
            h = a
    z = h
    norms = None
    out = z
    if normalize:
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        if np.any(norms < DEGENERATE_NORM):
            bad = int(np.flatnonzero(norms[:, 0] < DEGENERATE_NORM)[0])
            raise ValueError(f"degenerate direction in row {bad}: representation norm below 1e-12")
        out = z / norms
    return out, ForwardCache(spec, _fingerprint(params), inputs, pre, z, norms)


def backward(spec: MlpSpec, params, cache: ForwardCache, grad_embeddings) -> list:
    """Parameter gradients ``[(dW, db), ...]`` given dLoss/d(embeddings)."""
    if cache.spec != spec or cache.token != _fingerprint(params):
        raise ValueError("stale cache: parameters changed since the forward pass")
    g = np.asarray(grad_embeddings, dtype=np.float64)
    if g.shape != cache.z.shape:
        raise ValueError(f"gradient shape {g.shape} does not match embeddings {cache.z.shape}")
    if cache.norms is not None:
        u = cache.z / cache.norms
        g = (g - np.sum(g * u, axis=1, keepdims=True) * u) / cache.norms
    grads = [None] * spec.num_layers
    for k in reversed(range(spec.active_layers)):
        if k < spec.num_layers - 1:
            a = cache.pre[k]
            if spec.activations[k] == "tanh":
                g = g * (1.0 - np.tanh(a) ** 2)
            else:
                g = g * (a > 0)
        W, _ = params[k]
        grads[k] = (cache.inputs[k].T @ g, g.sum(axis=0))
        g = g @ W.T
    for k in range(spec.active_layers, spec.num_layers):
        W, b = params[k]
        grads[k] = (np.zeros_like(W), np.zeros_like(b))
    return grads


@dataclass
class SyntheticDataset:
    """Balanced Gaussian blobs around well-separated class centers."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    centers: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    def resample(self, per_class: int, seed: int) -> SyntheticDataset:
        """Fresh draws around the same centers, e.g. for a held-out set."""
        rng = RandomSource(seed)
        return _sample(self.centers, per_class, self.params["noise_sigma"], rng,
                       dict(self.params, per_class=per_class, sample_seed=seed))


def _sample(centers, per_class, sigma, rng, params):
    K, dim = centers.shape
    labels = np.repeat(np.arange(K), per_class)
    X = centers[labels] + sigma * rng.normal((K * per_class, dim))
    return SyntheticDataset(X, labels, K, centers, params)


def make_blobs(K: int, per_class: int, input_dim: int, separation: float,
               noise_sigma: float, seed: int) -> SyntheticDataset:
    """K blobs of ``per_class`` points; centers pairwise at least 60 degrees apart."""
    if K < 2:
        raise ValueError("need K >= 2 classes")
    if per_class < 1:
        raise ValueError("need per_class >= 1")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = RandomSource(seed)
    centers = []
    for _ in range(K):
        for _attempt in range(1000):
            c = rng.normal(input_dim)
            c /= np.linalg.norm(c)
            if all(float(c @ other) <= 0.5 for other in centers):
                centers.append(c)
                break
        else:
            raise ValueError(f"cannot place centers: {K} directions 60 degrees apart in {input_dim} dims")
    centers = separation * np.array(centers)
    params = dict(K=K, per_class=per_class, input_dim=input_dim, separation=separation,
                  noise_sigma=noise_sigma, seed=seed)
    return _sample(centers, per_class, noise_sigma, rng, params)


def augment(x, sigma_aug: float, rng: RandomSource):
    """Additive Gaussian view of ``x`` (a row or a matrix of rows)."""
    if sigma_aug < 0:
        raise ValueError("sigma_aug must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if sigma_aug == 0:
        return x.copy()
    return x + sigma_aug * rng.normal(x.shape)


@dataclass
class TrainConfig:
    """Encoder training settings (SGD with momentum, cosine learning-rate decay).

    ``eval_every`` counts epochs; traces are indexed by optimizer iteration.
    The prototype rows (normalized losses) share the learning rate but are
    not weight-decayed; they are projected back to the sphere after each step.
    """

    loss_kind: str = "nonl"
    epochs: int = 60
    batch_size: int = 100
    base_lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    tau: float = 0.1
    augment_sigma: float = 0.0
    seed: int = 0
    eval_every: int = 1
    min_lr_factor: float = 0.001
    prototype_lr_scale: float = 1.0
    warmup_epochs: int = 0
    warmup_start_lr: float = 0.0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}; expected one of {LOSS_KINDS}")
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("epochs must be >= 1 and batch_size >= 2")
        if not self.base_lr > 0 or not self.tau > 0:
            raise ValueError("base_lr and tau must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.augment_sigma < 0:
            raise ValueError("weight_decay and augment_sigma must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must lie in [0, epochs)")
        if self.warmup_start_lr < 0:
            raise ValueError("warmup_start_lr must be >= 0")
        if not self.prototype_lr_scale > 0:
            raise ValueError("prototype_lr_scale must be positive")


@dataclass
class EncoderModel:
    """Trained encoder parameters plus the jointly trained classifier, if any."""

    spec: MlpSpec
    layers: list
    prototypes: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None

    def embed(self, X, normalize: bool = True) -> np.ndarray:
        return forward(self.spec, self.layers, X, normalize)[0]


def stratified_batches(labels, num_classes: int, batch_size: int, rng: RandomSource) -> list:
    """Shuffle within classes, then deal classes round-robin in a random class order.

    Consecutive positions hold different classes while more than one class
    still has samples left, so every batch of size >= 2 of a balanced set
    spans at least two classes.
    """
    labels = np.asarray(labels)
    if batch_size > labels.size:
        raise ValueError(f"batch size {batch_size} exceeds dataset size {labels.size}")
    queues = [list(rng.permutation(np.flatnonzero(labels == c))) for c in range(num_classes)]
    order, last = [], -1
    while any(queues):
        classes = [c for c in rng.permutation(num_classes) if queues[c]]
        if len(classes) > 1 and classes[0] == last:
            classes = classes[1:] + classes[:1]  # no repeat across the round boundary
        for c in classes:
            order.append(queues[c].pop())
        last = classes[-1]
    order = np.asarray(order)
    return [order[i:i + batch_size] for i in range(0, order.size, batch_size)]


def _batch_loss(kind, model, X, y, K, tau, cfg, rng):
    """Loss value and gradients for one mini-batch.

    Returns ``(value, layer_grads, proto_grad, bias_grad)``.
    """
    spec, layers = model.spec, model.layers
    if kind == "scl":
        X1 = augment(X, cfg.augment_sigma, rng)
        X2 = augment(X, cfg.augment_sigma, rng)
        U1, c1 = forward(spec, layers, X1)
        U2, c2 = forward(spec, layers, X2)
        ev = scl_loss(EmbeddingBatch(np.vstack([U1, U2]), np.concatenate([y, y]), K), tau)
        m = X.shape[0]
        g1 = backward(spec, layers, c1, ev.grad_features[:m])
        g2 = backward(spec, layers, c2, ev.grad_features[m:])
        grads = [(a[0] + b[0], a[1] + b[1]) for a, b in zip(g1, g2)]
        return ev.value, grads, None, None
    Xa = augment(X, cfg.augment_sigma, rng)
    if kind == "ce":
        Z, cache = forward(spec, layers, Xa, normalize=False)
        ev = ce_loss(EmbeddingBatch(Z, y, K), model.prototypes, model.bias)
        return ev.value, backward(spec, layers, cache, ev.grad_features), ev.grad_prototypes, ev.grad_bias
    U, cache = forward(spec, layers, Xa)
    batch = EmbeddingBatch(U, y, K)
    if kind == "proto":
        ev = proto_loss(batch, tau)
        return ev.value, backward(spec, layers, cache, ev.grad_features), None, None
    fn = {"normface": normface_loss, "ntce": ntce_loss, "nonl": nonl_loss}[kind]
    ev = fn(batch, model.prototypes, tau)
    return ev.value, backward(spec, layers, cache, ev.grad_features), ev.grad_prototypes, None


def full_loss(kind, model: EncoderModel, dataset: SyntheticDataset, tau: float) -> float:
    """Loss on the whole clean dataset (for logging)."""
    K = dataset.num_classes
    if kind == "ce":
        Z = model.embed(dataset.inputs, normalize=False)
        return ce_loss(EmbeddingBatch(Z, dataset.labels, K), model.prototypes, model.bias).value
    batch = EmbeddingBatch(model.embed(dataset.inputs), dataset.labels, K)
    if kind == "scl":
        doubled = EmbeddingBatch(np.vstack([batch.features] * 2), np.tile(batch.labels, 2), K)
        return scl_loss(doubled, tau).value
    if kind == "proto":
        return proto_loss(batch, tau).value
    fn = {"normface": normface_loss, "ntce": ntce_loss, "nonl": nonl_loss}[kind]
    return fn(batch, model.prototypes, tau).value


def report_model(model: EncoderModel, dataset: SyntheticDataset):
    """NC report on the full clean dataset; class means stand in for prototypes when absent."""
    raw = model.embed(dataset.inputs, normalize=model.bias is None)
    return nc_report(EmbeddingBatch(raw, dataset.labels, dataset.num_classes), model.prototypes)


def _learning_rate(step, total, warm, config, min_lr):
    if step < warm:
        return config.warmup_start_lr + (config.base_lr - config.warmup_start_lr) * step / warm
    return cosine_schedule(step - warm, total - warm, config.base_lr, min_lr)


def train_encoder(dataset: SyntheticDataset, spec: MlpSpec, config: TrainConfig):
    """Train the encoder (and classifier, if the loss has one); returns ``(model, trace)``.

    CE trains a biased linear head on raw embeddings; the normalized
    prototype losses train unit prototype rows; SCL and the prototype loss
    train the encoder only. Deterministic given ``config.seed``.
    """
    if spec.input_dim != dataset.inputs.shape[1]:
        raise ValueError("encoder input width does not match the dataset")
    K = dataset.num_classes
    kind = config.loss_kind
    rng = RandomSource(config.seed)
    init_rng, batch_rng, aug_rng, proto_rng = rng.spawn(4)
    model = EncoderModel(spec, init_params(spec, init_rng))
    d = spec.output_dim
    if kind == "ce":
        model.prototypes = proto_rng.normal((K, d)) / math.sqrt(d)
        model.bias = np.zeros(K)
    elif kind in ("normface", "ntce", "nonl"):
        model.prototypes = normalize_rows(proto_rng.normal((K, d)))

    steps_per_epoch = math.ceil(dataset.size / config.batch_size)
    total = config.epochs * steps_per_epoch
    warm = config.warmup_epochs * steps_per_epoch
    min_lr = config.base_lr * config.min_lr_factor
    vel_layers = [(np.zeros_like(W), np.zeros_like(b)) for W, b in model.layers]
    vel_proto = None if model.prototypes is None else np.zeros_like(model.prototypes)
    vel_bias = None if model.bias is None else np.zeros_like(model.bias)
    mu, wd = config.momentum, config.weight_decay

    trace = RunTrace(manifest={
        "config": asdict(config),
        "spec": {"widths": list(spec.widths), "activations": list(spec.activations), "head": spec.head},
        "dataset": dataset.params,
        "backend": _backend.NAME,
    })
    start = time.perf_counter()
    trace.append(0, full_loss(kind, model, dataset, config.tau), report_model(model, dataset))
    step = 0
    for epoch in range(config.epochs):
        for bi, idx in enumerate(stratified_batches(dataset.labels, K, config.batch_size, batch_rng)):
            lr = _learning_rate(step, total, warm, config, min_lr)
            try:
                _, grads, g_proto, g_bias = _batch_loss(
                    kind, model, dataset.inputs[idx], dataset.labels[idx], K, config.tau, config, aug_rng
                )
            except ValueError as exc:
                raise ValueError(f"epoch {epoch} batch {bi}: {exc}") from exc
            new_layers, new_vel = [], []
            for (W, b), (vW, vb), (gW, gb) in zip(model.layers, vel_layers, grads):
                vW = mu * vW + gW + wd * W
                vb = mu * vb + gb + wd * b
                new_layers.append((W - lr * vW, b - lr * vb))
                new_vel.append((vW, vb))
            model.layers, vel_layers = new_layers, new_vel
            if kind == "ce":
                vel_proto = mu * vel_proto + g_proto + wd * model.prototypes
                vel_bias = mu * vel_bias + g_bias + wd * model.bias
                model.prototypes = model.prototypes - lr * vel_proto
                model.bias = model.bias - lr * vel_bias
            elif g_proto is not None:
                vel_proto = mu * vel_proto + g_proto
                step_lr = lr * config.prototype_lr_scale
                model.prototypes = normalize_rows(model.prototypes - step_lr * vel_proto)
            step += 1
        if (epoch + 1) % config.eval_every == 0 or epoch + 1 == config.epochs:
            trace.append(step, full_loss(kind, model, dataset, config.tau), report_model(model, dataset))
    trace.manifest["wall_clock_s"] = time.perf_counter() - start
    return model, trace
