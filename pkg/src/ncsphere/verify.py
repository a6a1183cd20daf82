"""Numerical certification of the loss bounds, equivalences and NC optimality.

Every check is deterministic given its seed and reports its worst violation.
Single-quantity checks report the raw worst deviation against their
tolerance. Checks that combine several quantities with different tolerances
report the worst ratio ``deviation / tolerance`` against a tolerance of 1.

``inject=True`` makes a check test a deliberately wrong statement (a flipped
inequality, a shifted identity, or the wrong simplex target). It exists so
the harness can prove that it detects violations.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .classify import accuracy, fixed_prototypes
from .geometry import EmbeddingBatch, class_means, normalize_rows, simplex_etf
from .losses import (
    ce_loss, class_level_nonl, class_level_ntce, lstar_loss, nonl_loss, normface_loss,
    ntce_loss, proto_loss, scl_loss,
)
from .metrics import erank_intra
from .numerics import RandomSource
from .optim import OptimConfig, ufm_optimize

BOUND_TOL = 1e-12
IDENTITY_TOL = 1e-12
GRADIENT_TOL = 1e-10
TIGHT_TOL = 1e-9
NC2_TOL = 0.02
NC3_TOL = 0.05
NC1_ERANK_TOL = 0.5
NC1_SPREAD_TOL = 0.05
LOSS_GAP_TOL = 1e-4
# Planted violation for the NC checks: compare class means against an
# orthogonal frame, which misses the simplex by 1/(K-1) > NC2_TOL for K <= 50.
INJECTED_NC2_TARGET = 0.0


@dataclass
class CheckResult:
    name: str
    passed: bool
    violation: float
    tolerance: float
    trials: int
    seed: int
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def _result(name, violation, tolerance, trials, seed, **details):
    violation = float(violation)
    return CheckResult(name, bool(violation <= tolerance), violation, tolerance, trials, seed, details)


def _unit(rng, rows, d):
    return normalize_rows(rng.normal((rows, d)))


def _balanced_config(rng, k_range=(2, 8), n_range=(1, 6), d_max=16):
    K = int(rng.integers(k_range[0], k_range[1] + 1))
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    d = int(rng.integers(K, d_max + 1))
    tau = float(rng.uniform(0.1, 1.0))
    return K, n, d, tau


def _collapsed(rng, K, n, d):
    """Each class a single random unit point repeated n times."""
    points = _unit(rng, K, d)
    labels = np.repeat(np.arange(K), n)
    return EmbeddingBatch(points[labels], labels, K)


def _jensen(name, sample_loss, class_loss, trials, seed, inject):
    rng = RandomSource(seed)
    worst = 0.0
    for _ in range(trials):
        K, n, d, tau = _balanced_config(rng)
        labels = np.repeat(np.arange(K), n)
        batch = EmbeddingBatch(_unit(rng, K * n, d), labels, K)
        W = _unit(rng, K, d)
        gap = sample_loss(batch, W, tau).value - class_loss(class_means(batch), W, tau, n)
        worst = max(worst, gap if inject else -gap)
    return _result(name, max(worst, 0.0), BOUND_TOL, trials, seed)


def check_jensen_ntce(trials: int = 1000, seed: int = 0, inject: bool = False) -> CheckResult:
    """Sample-level NTCE never falls below its class-mean reduction."""
    return _jensen("jensen_ntce", ntce_loss, class_level_ntce, trials, seed, inject)


def check_jensen_nonl(trials: int = 1000, seed: int = 0, inject: bool = False) -> CheckResult:
    """Sample-level NONL never falls below its class-mean reduction (negatives only)."""
    return _jensen("jensen_nonl", nonl_loss, class_level_nonl, trials, seed, inject)


def check_jensen_tightness(trials: int = 200, seed: int = 0, inject: bool = False) -> CheckResult:
    """Both class-mean reductions are exact at blockwise-collapsed configurations."""
    rng = RandomSource(seed)
    worst = 0.0
    for _ in range(trials):
        K, n, d, tau = _balanced_config(rng)
        batch = _collapsed(rng, K, n, d)
        W = _unit(rng, K, d)
        means = class_means(batch)
        for fn, cls in ((ntce_loss, class_level_ntce), (nonl_loss, class_level_nonl)):
            ref = cls(means, W, tau, n) + (1e-3 if inject else 0.0)
            worst = max(worst, abs(fn(batch, W, tau).value - ref))
    return _result("jensen_tightness", worst, TIGHT_TOL, trials, seed)


def _random_scl_batch(rng):
    """Random unit rows with 2..5 rows per class, so every anchor has a positive."""
    K = int(rng.integers(2, 7))
    n = int(rng.integers(2, 6))
    d = int(rng.integers(2, 17))
    tau = float(rng.uniform(0.1, 1.0))
    labels = np.repeat(np.arange(K), n)
    return EmbeddingBatch(_unit(rng, K * n, d), labels, K), tau


def check_scl_proto_bounds(trials: int = 1000, seed: int = 0, inject: bool = False) -> CheckResult:
    """SCL and prototype losses both dominate the common bound on feasible batches.

    Draws where the bound is undefined are resampled; more than ``10 * trials``
    draws in total is an error.
    """
    rng = RandomSource(seed)
    worst, feasible, draws = 0.0, 0, 0
    while feasible < trials:
        draws += 1
        if draws > 10 * trials:
            raise RuntimeError(f"feasibility guard: {draws - 1} draws for {feasible} feasible configs")
        batch, tau = _random_scl_batch(rng)
        try:
            bound = lstar_loss(batch, tau)
        except ValueError:
            continue
        feasible += 1
        for value in (scl_loss(batch, tau).value, proto_loss(batch, tau).value):
            gap = value - bound
            worst = max(worst, gap if inject else -gap)
    return _result("scl_proto_bounds", max(worst, 0.0), BOUND_TOL, trials, seed,
                   draws=draws, infeasible=draws - feasible)


def collapsed_simplex_batch(K: int, n: int, d: int, seed: int = 0) -> EmbeddingBatch:
    """n copies of each vertex of a random simplex ETF."""
    etf = simplex_etf(K, d, RandomSource(seed)).directions
    labels = np.repeat(np.arange(K), n)
    return EmbeddingBatch(etf[labels], labels, K)


def check_scl_proto_tightness(seed: int = 0, inject: bool = False,
                              class_counts=(2, 3, 5, 10)) -> CheckResult:
    """At collapsed simplex batches the SCL loss, the prototype loss and the bound coincide."""
    rng = RandomSource(seed)
    worst, trials = 0.0, 0
    for K in class_counts:
        for n in (2, 4):
            d = K + int(rng.integers(0, 4))
            tau = float(rng.uniform(0.1, 1.0))
            batch = collapsed_simplex_batch(K, n, d, seed + K)
            bound = lstar_loss(batch, tau) + (1e-3 if inject else 0.0)
            worst = max(worst, abs(scl_loss(batch, tau).value - bound),
                        abs(proto_loss(batch, tau).value - bound))
            trials += 1
    return _result("scl_proto_tightness", worst, TIGHT_TOL, trials, seed)


def _normface_pair(rng):
    K = int(rng.integers(2, 11))
    M = int(rng.integers(2, 30))
    d = int(rng.integers(2, 17))
    tau = float(rng.uniform(0.05, 1.0))
    labels = rng.integers(0, K, M)
    U = _unit(rng, M, d)
    W = _unit(rng, K, d)
    batch = EmbeddingBatch(U, labels, K)
    nf = normface_loss(batch, W, tau)
    # Same logits as a bias-free linear layer with weights W / tau on unit inputs.
    ce = ce_loss(batch, W / tau, np.zeros(K))
    return W, tau, nf, ce


def check_normface_equivalence(trials: int = 100, seed: int = 0, inject: bool = False) -> CheckResult:
    """NormFace equals bias-free CE with 1/tau-scaled logits on unit inputs (value)."""
    rng = RandomSource(seed)
    worst = 0.0
    for _ in range(trials):
        _, _, nf, ce = _normface_pair(rng)
        worst = max(worst, abs(nf.value - ce.value - (1e-3 if inject else 0.0)))
    return _result("normface_equivalence", worst, IDENTITY_TOL, trials, seed)


def check_normface_gradient(trials: int = 100, seed: int = 0, inject: bool = False) -> CheckResult:
    """The same equivalence for gradients: features directly, prototypes after the chain rule."""
    rng = RandomSource(seed)
    worst = 0.0
    for _ in range(trials):
        W, tau, nf, ce = _normface_pair(rng)
        g_proto = ce.grad_prototypes / tau  # d/dW of the W/tau parametrization
        g_proto = g_proto - np.sum(g_proto * W, axis=1, keepdims=True) * W  # unit-row Jacobian
        shift = 1e-3 if inject else 0.0
        worst = max(worst, np.max(np.abs(nf.grad_features - ce.grad_features)) + shift,
                    np.max(np.abs(nf.grad_prototypes - g_proto)))
    return _result("normface_gradient", worst, GRADIENT_TOL, trials, seed)


def check_ntce_offset(trials: int = 200, seed: int = 0, inject: bool = False) -> CheckResult:
    """NTCE minus NormFace equals log n at collapsed balanced batches.

    The domain is collapse onto the prototypes themselves (every feature of
    class c equals w_c). For collapse onto other points the two denominators
    run over different cross-inner-products and the identity does not hold.
    """
    rng = RandomSource(seed)
    worst = 0.0
    for _ in range(trials):
        K, n, d, tau = _balanced_config(rng)
        batch = _collapsed(rng, K, n, d)
        W = class_means(batch)
        offset = ntce_loss(batch, W, tau).value - normface_loss(batch, W, tau).value
        worst = max(worst, abs(offset - math.log(n) - (1e-3 if inject else 0.0)))
    return _result("ntce_offset", worst, IDENTITY_TOL, trials, seed)


def nc_geometry(batch: EmbeddingBatch, W=None, target=None) -> dict:
    """Raw NC deviations of a final state.

    nc2: worst pairwise cosine of normalized class means against ``target``
    (default -1/(K-1)); nc3: worst distance between normalized class mean and
    prototype (skipped without ``W``); nc1: mean intra erank and the worst
    distance of a unit feature to its class mean.
    """
    unit = batch.normalize()
    K = unit.num_classes
    means = class_means(unit)
    mu_hat = normalize_rows(means)
    G = mu_hat @ mu_hat.T
    off = ~np.eye(K, dtype=bool)
    target = -1.0 / (K - 1) if target is None else target
    out = {
        "nc2_cosine_dev": float(np.max(np.abs(G[off] - target))),
        "nc1_erank_intra": erank_intra(unit),
        "nc1_max_spread": float(np.max(np.linalg.norm(unit.features - means[unit.labels], axis=1))),
    }
    if W is not None:
        out["nc3_max_dist"] = float(np.max(np.linalg.norm(mu_hat - normalize_rows(W), axis=1)))
    return out


_NC_TOLERANCES = {
    "nc2_cosine_dev": NC2_TOL,
    "nc3_max_dist": NC3_TOL,
    "nc1_erank_intra": NC1_ERANK_TOL,
    "nc1_max_spread": NC1_SPREAD_TOL,
}


def _worst_ratio(geometry: dict, keys=None) -> float:
    keys = geometry.keys() if keys is None else keys
    return max(geometry[k] / _NC_TOLERANCES[k] for k in keys)


def check_nc_optimality(loss_kind: str = "nonl", seeds=(0, 1, 2, 3, 4), num_classes: int = 10,
                        per_class: int = 20, dim: int = 16, tau: float = 0.1,
                        steps: int = 20000, inject: bool = False) -> CheckResult:
    """UFM descent from random starts reaches NC1-NC3 within tolerance for every seed."""
    if loss_kind not in ("normface", "ntce", "nonl", "ce"):
        raise ValueError(f"NC optimality is checked for prototype losses, not {loss_kind!r}")
    worst, per_seed = 0.0, {}
    for s in seeds:
        cfg = OptimConfig(loss_kind=loss_kind, steps=steps, seed=s, eval_every=steps,
                          num_classes=num_classes, per_class=per_class, dim=dim, tau=tau)
        state, _ = ufm_optimize(cfg)
        target = INJECTED_NC2_TARGET if inject else None
        geo = nc_geometry(state.batch(), state.prototypes, target)
        per_seed[int(s)] = geo
        worst = max(worst, _worst_ratio(geo))
    return _result(f"nc_optimality_{loss_kind}", worst, 1.0, len(seeds), int(seeds[0]),
                   per_seed=per_seed)


def check_minimizer_equivalence(seed: int = 0, inject: bool = False, num_classes: int = 5,
                                per_class: int = 10, dim: int = 8, tau: float = 0.5,
                                steps: int = 20000) -> CheckResult:
    """SCL and prototype-loss minimizers coincide and are read out by fixed prototypes.

    After SCL descent: the two losses agree within 1e-4, the fixed-prototype
    classifier is perfect, and the class means form a simplex. A prototype-loss
    run from a fresh seed must reach the same simplex.
    """
    base = dict(steps=steps, eval_every=steps, num_classes=num_classes, per_class=per_class,
                dim=dim, tau=tau)
    scl_state, _ = ufm_optimize(OptimConfig(loss_kind="scl", seed=seed, **base))
    batch = scl_state.batch()
    gap = abs(scl_loss(batch, tau).value - proto_loss(batch, tau).value)
    acc = accuracy(fixed_prototypes(batch), batch.normalize())
    target = INJECTED_NC2_TARGET if inject else None
    scl_geo = nc_geometry(batch, target=target)
    proto_state, _ = ufm_optimize(OptimConfig(loss_kind="proto", seed=seed + 1, **base))
    proto_geo = nc_geometry(proto_state.batch(), target=target)
    ratio = max(gap / LOSS_GAP_TOL, (1.0 - acc) * 1e12,
                scl_geo["nc2_cosine_dev"] / NC2_TOL, proto_geo["nc2_cosine_dev"] / NC2_TOL)
    return _result("minimizer_equivalence", ratio, 1.0, 2, seed, loss_gap=gap, fp_accuracy=acc,
                   scl_nc2=scl_geo["nc2_cosine_dev"], proto_nc2=proto_geo["nc2_cosine_dev"])


CHECKS = (
    "jensen_ntce", "jensen_nonl", "jensen_tightness", "scl_proto_bounds", "scl_proto_tightness",
    "normface_equivalence", "normface_gradient", "ntce_offset",
    "nc_optimality_normface", "nc_optimality_ntce", "nc_optimality_nonl",
    "minimizer_equivalence",
)


def run_all(seed: int = 0, inject=None) -> list:
    """Run every check with its defaults; ``inject`` names a check to run with a planted violation."""
    if inject is not None and inject not in CHECKS:
        raise ValueError(f"unknown check {inject!r}; expected one of {CHECKS}")
    runners = {
        "jensen_ntce": lambda j: check_jensen_ntce(seed=seed, inject=j),
        "jensen_nonl": lambda j: check_jensen_nonl(seed=seed, inject=j),
        "jensen_tightness": lambda j: check_jensen_tightness(seed=seed, inject=j),
        "scl_proto_bounds": lambda j: check_scl_proto_bounds(seed=seed, inject=j),
        "scl_proto_tightness": lambda j: check_scl_proto_tightness(seed=seed, inject=j),
        "normface_equivalence": lambda j: check_normface_equivalence(seed=seed, inject=j),
        "normface_gradient": lambda j: check_normface_gradient(seed=seed, inject=j),
        "ntce_offset": lambda j: check_ntce_offset(seed=seed, inject=j),
        "nc_optimality_normface": lambda j: check_nc_optimality(
            "normface", seeds=tuple(range(seed, seed + 5)), inject=j),
        "nc_optimality_ntce": lambda j: check_nc_optimality(
            "ntce", seeds=tuple(range(seed, seed + 5)), inject=j),
        "nc_optimality_nonl": lambda j: check_nc_optimality(
            "nonl", seeds=tuple(range(seed, seed + 5)), inject=j),
        "minimizer_equivalence": lambda j: check_minimizer_equivalence(seed=seed, inject=j),
    }
    results = []
    for name in CHECKS:
        start = time.perf_counter()
        res = runners[name](name == inject)
        res.details["seconds"] = time.perf_counter() - start
        results.append(res)
    return results
