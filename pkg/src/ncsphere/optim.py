"""Riemannian gradient descent for the unconstrained-features model.

Features and prototypes are free unit vectors (rows) on a product of
spheres. Each step takes the Euclidean loss gradient, projects it onto the
tangent space row by row, and retracts by renormalization. CE is the
exception: it runs plain gradient descent on raw features, weights and a
bias, with weight decay on the classifier, so its radial freedom is intact.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _backend
from .geometry import EmbeddingBatch, normalize_rows
from .losses import LossEval, ce_loss, nonl_loss, normface_loss, ntce_loss, proto_loss, scl_loss
from .metrics import NCReport, nc_report
from .numerics import RandomSource, gaussian_matrix

LOSS_KINDS = ("ce", "normface", "ntce", "nonl", "scl", "proto")
PROTOTYPE_LOSSES = ("normface", "ntce", "nonl")


def tangent_project(grad, point):
    """Remove the component of ``grad`` along ``point`` (rowwise for matrices)."""
    grad = np.asarray(grad, dtype=np.float64)
    point = np.asarray(point, dtype=np.float64)
    return grad - np.sum(grad * point, axis=-1, keepdims=True) * point


def retract(point, step):
    """Map ``point - step`` back onto the sphere (rowwise for matrices)."""
    target = np.asarray(point, dtype=np.float64) - np.asarray(step, dtype=np.float64)
    norms = np.linalg.norm(target, axis=-1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise ValueError("degenerate retraction: step cancels the point")
    return target / norms


def cosine_schedule(t, T, eta0, eta_min):
    if t < 0 or t > T:
        raise ValueError(f"step {t} outside [0, {T}]")
    return eta_min + 0.5 * (eta0 - eta_min) * (1.0 + math.cos(math.pi * t / T))


@dataclass
class OptimConfig:
    """UFM run settings.

    Rates are per sample: each step moves along M times the gradient of the
    mean loss (equivalently, the gradient of the summed loss). The defaults
    (base_lr 2.0 after a linear warmup from 0.02) are engineering choices;
    without the warmup, large early steps can merge classes into a shared
    point that descent escapes only very slowly. At the peak rate the
    iteration is not locally stable even at an exact collapse (rounding
    noise grows), so convergence happens as the cosine decays; fixed-point
    checks need a smaller rate. ``warmup_steps=None``
    resolves to ``min(2000, steps // 10)``.
    """

    loss_kind: str = "nonl"
    steps: int = 20000
    base_lr: float = 2.0
    min_lr_factor: float = 0.001
    warmup_steps: Optional[int] = None
    warmup_start_lr: float = 0.02
    seed: int = 0
    eval_every: int = 50
    num_classes: int = 10
    per_class: int = 20
    dim: int = 16
    tau: float = 0.1
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}; expected one of {LOSS_KINDS}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if self.warmup_steps is None:
            self.warmup_steps = min(2000, self.steps // 10)
        if not 0 <= self.warmup_steps < self.steps:
            raise ValueError("warmup_steps must lie in [0, steps)")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def min_lr(self) -> float:
        return self.base_lr * self.min_lr_factor


def warmup_then_cosine(t, config: OptimConfig) -> float:
    """Linear warmup from ``warmup_start_lr`` to ``base_lr``, then cosine decay to ``min_lr``."""
    w = config.warmup_steps
    if t < w:
        return config.warmup_start_lr + (config.base_lr - config.warmup_start_lr) * t / w
    return cosine_schedule(t - w, config.steps - w, config.base_lr, config.min_lr)


@dataclass
class UfmState:
    features: np.ndarray
    prototypes: Optional[np.ndarray]
    labels: np.ndarray
    tau: float
    bias: Optional[np.ndarray] = None

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.prototypes is None else self.prototypes.shape[0]

    def batch(self) -> EmbeddingBatch:
        return EmbeddingBatch(self.features, self.labels, self.num_classes)

    def copy(self) -> UfmState:
        return UfmState(
            self.features.copy(),
            None if self.prototypes is None else self.prototypes.copy(),
            self.labels.copy(),
            self.tau,
            None if self.bias is None else self.bias.copy(),
        )


@dataclass
class TraceRecord:
    iteration: int
    loss: float
    report: NCReport


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def append(self, iteration, loss, report):
        if self.records and iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must be strictly increasing")
        self.records.append(TraceRecord(int(iteration), float(loss), report))

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]


def random_state(config: OptimConfig) -> UfmState:
    rng = RandomSource(config.seed)
    K, n, d = config.num_classes, config.per_class, config.dim
    U = normalize_rows(gaussian_matrix(rng, K * n, d))
    W = normalize_rows(gaussian_matrix(rng, K, d))
    labels = np.repeat(np.arange(K), n)
    if config.loss_kind in ("scl", "proto"):
        W = None
    bias = np.zeros(K) if config.loss_kind == "ce" else None
    return UfmState(U, W, labels, config.tau, bias)


def evaluate(state: UfmState, kind: str) -> LossEval:
    batch = state.batch()
    if kind == "ce":
        return ce_loss(batch, state.prototypes, state.bias)
    if kind == "normface":
        return normface_loss(batch, state.prototypes, state.tau)
    if kind == "ntce":
        return ntce_loss(batch, state.prototypes, state.tau)
    if kind == "nonl":
        return nonl_loss(batch, state.prototypes, state.tau)
    if kind == "scl":
        return scl_loss(batch, state.tau)
    if kind == "proto":
        return proto_loss(batch, state.tau)
    raise ValueError(f"unknown loss kind {kind!r}")


def riemannian_grad_norm(state: UfmState, kind: str) -> float:
    """Frobenius norm of the tangent-projected gradient over all sphere variables."""
    ev = evaluate(state, kind)
    total = np.sum(tangent_project(ev.grad_features, state.features) ** 2)
    if ev.grad_prototypes is not None:
        total += np.sum(tangent_project(ev.grad_prototypes, state.prototypes) ** 2)
    return float(np.sqrt(total))


def report_state(state: UfmState) -> NCReport:
    return nc_report(state.batch(), state.prototypes)


def ufm_optimize(config: OptimConfig, init=None, freeze_features: bool = False):
    """Run the configured descent; returns ``(final_state, trace)``.

    ``init`` is a :class:`UfmState`, or ``None``/``"random"`` for a seeded
    random start. An NC report is logged every ``eval_every`` steps and at
    the end.
    """
    kind = config.loss_kind
    if init is None or (isinstance(init, str) and init == "random"):
        state = random_state(config)
    elif isinstance(init, UfmState):
        state = init.copy()
    else:
        raise ValueError(f"unsupported init {init!r}")
    if kind in PROTOTYPE_LOSSES + ("ce",) and state.prototypes is None:
        raise ValueError(f"loss {kind} needs prototypes in the initial state")

    trace = RunTrace(manifest={
        "config": asdict(config),
        "backend": _backend.NAME,
        "freeze_features": freeze_features,
    })
    start = time.perf_counter()
    T = config.steps
    for t in range(T + 1):
        try:
            ev = evaluate(state, kind)
        except ValueError as exc:
            raise ValueError(f"iteration {t}: {exc}") from exc
        if t % config.eval_every == 0 or t == T:
            trace.append(t, ev.value, report_state(state))
        if t == T:
            break
        lr = warmup_then_cosine(t, config) * state.features.shape[0]
        if kind == "ce":
            wd = config.weight_decay
            if not freeze_features:
                state.features = state.features - lr * ev.grad_features
            state.prototypes = state.prototypes - lr * (ev.grad_prototypes + wd * state.prototypes)
            state.bias = state.bias - lr * (ev.grad_bias + wd * state.bias)
            continue
        if not freeze_features:
            state.features = retract(state.features, lr * tangent_project(ev.grad_features, state.features))
        if ev.grad_prototypes is not None:
            state.prototypes = retract(
                state.prototypes, lr * tangent_project(ev.grad_prototypes, state.prototypes)
            )
    trace.manifest["wall_clock_s"] = time.perf_counter() - start
    return state, trace
