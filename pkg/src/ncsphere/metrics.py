"""Neural Collapse metric suite and the EWMA convergence detector."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .geometry import EmbeddingBatch, PrototypeSet, class_means, gram, normalize_rows
from .numerics import as_matrix, covariance, singular_values, sym_eigenvalues

# Covariance eigenvalues at or below this (in squared feature units) are
# treated as exactly zero. Unit-norm features rounded in float64 carry
# covariance noise around 1e-32, so this only absorbs numerically collapsed
# spread (standard deviation below ~1e-7).
COLLAPSE_FLOOR = 1e-14

TRACE_COLUMNS = (
    "iter", "loss", "acc", "erank_intra", "erank_inter", "erank_weights",
    "align_w", "align_inst", "mir", "hdr",
)
_ALIASES = {
    "acc": "train_accuracy",
    "align_w": "weight_alignment",
    "align_inst": "instance_alignment",
}


@dataclass(frozen=True)
class NCReport:
    erank_intra: float
    erank_inter: float
    erank_weights: float
    weight_alignment: float
    instance_alignment: float
    mir: float
    hdr: float
    train_accuracy: float

    def as_dict(self) -> dict:
        return asdict(self)


def effective_rank(s, floor: float = 0.0) -> float:
    """exp of the Shannon entropy of ``s / sum(s)``.

    Entries ``<= floor`` count as zero; an all-zero spectrum has rank 0.
    """
    s = np.asarray(s, dtype=np.float64).ravel()
    s = s[s > floor]
    total = s.sum()
    if s.size == 0 or total <= 0:
        return 0.0
    if s.max() == s.min():
        return float(s.size)  # flat spectrum: exp(log r) would round
    p = s / total
    p = p[p > 0]  # subnormal entries can underflow to zero here
    return float(np.exp(-np.sum(p * np.log(p))))


def erank_intra(batch: EmbeddingBatch, floor: float = COLLAPSE_FLOOR) -> float:
    """Mean over classes of the effective rank of the within-class covariance."""
    ranks = []
    for c in range(batch.num_classes):
        rows = batch.features[batch.labels == c]
        if rows.shape[0] == 0:
            raise ValueError(f"class without samples: {c}")
        ranks.append(effective_rank(sym_eigenvalues(covariance(rows)), floor))
    return float(np.mean(ranks))


def erank_inter(batch: EmbeddingBatch, floor: float = COLLAPSE_FLOOR) -> float:
    """Effective rank of the covariance of the class means around their average."""
    if batch.num_classes < 2:
        raise ValueError("inter-class effective rank needs K >= 2")
    return effective_rank(sym_eigenvalues(covariance(class_means(batch))), floor)


def erank_weights(W) -> float:
    W = W.weights if isinstance(W, PrototypeSet) else as_matrix(W)
    return effective_rank(singular_values(W))


def weight_alignment(batch: EmbeddingBatch, W) -> float:
    """Mean squared distance between each unit feature and its unit prototype."""
    W = W.weights if isinstance(W, PrototypeSet) else as_matrix(W)
    if W.shape[1] != batch.dim:
        raise ValueError("dimension mismatch between features and prototypes")
    U = normalize_rows(batch.features)
    W_hat = normalize_rows(W)
    return float(np.mean(np.sum((U - W_hat[batch.labels]) ** 2, axis=1)))


def instance_alignment(batch: EmbeddingBatch) -> float:
    """Mean over classes of the mean within-class pairwise squared distance.

    Uses sum_{i<j} ||u_i - u_j||^2 = m * sum_i ||u_i - mean||^2, so every
    pair is covered at linear cost. Classes with a single sample contribute 0.
    """
    U = normalize_rows(batch.features)
    vals = []
    for c in range(batch.num_classes):
        rows = U[batch.labels == c]
        m = rows.shape[0]
        if m < 2:
            vals.append(0.0)
            continue
        spread = np.sum((rows - rows.mean(axis=0)) ** 2)
        vals.append(2.0 * spread / (m - 1))
    return float(np.mean(vals))


def matrix_entropy(G) -> float:
    """Von Neumann entropy of a trace-one PSD matrix."""
    G = as_matrix(G)
    if abs(np.trace(G) - 1.0) > 1e-9:
        raise ValueError(f"matrix entropy needs trace 1, got {np.trace(G)}")
    lam = sym_eigenvalues(G)
    lam = lam[lam > 0]
    return float(-np.sum(lam * np.log(lam)))


def _entropies(G_W, G_M):
    had = as_matrix(G_W) * as_matrix(G_M)
    had = had / np.trace(had)
    return matrix_entropy(G_W), matrix_entropy(G_M), matrix_entropy(had)


def mir(G_W, G_M) -> float:
    h_w, h_m, h_wm = _entropies(G_W, G_M)
    denom = min(h_w, h_m)
    if denom <= 0:
        raise ValueError("degenerate entropy: a Gram matrix has rank one")
    return (h_w + h_m - h_wm) / denom


def hdr(G_W, G_M) -> float:
    h_w, h_m = matrix_entropy(G_W), matrix_entropy(G_M)
    denom = max(h_w, h_m)
    if denom <= 0:
        raise ValueError("degenerate entropy: both Gram matrices have rank one")
    return abs(h_w - h_m) / denom


def nc_report(batch: EmbeddingBatch, W=None) -> NCReport:
    """Full metric vector for a batch and its prototypes.

    Features are unit-normalized first. Without ``W`` the normalized class
    means serve as prototypes. Accuracy is nearest-prototype by cosine.
    When both Grams are rank one (K = 2 at collapse) MIR and HDR are NaN.
    """
    unit = batch.normalize()
    means = class_means(unit)
    if W is None:
        W = normalize_rows(means)
    W = W.weights if isinstance(W, PrototypeSet) else as_matrix(W)
    W_hat = normalize_rows(W)
    G_W = gram(W_hat, trace_normalize=True)
    G_M = gram(normalize_rows(means), trace_normalize=True)
    try:
        mir_val, hdr_val = mir(G_W, G_M), hdr(G_W, G_M)
    except ValueError:
        mir_val = hdr_val = float("nan")
    pred = np.argmax(unit.features @ W_hat.T, axis=1)
    return NCReport(
        erank_intra=erank_intra(unit),
        erank_inter=erank_inter(unit),
        erank_weights=erank_weights(W),
        weight_alignment=weight_alignment(unit, W_hat),
        instance_alignment=instance_alignment(unit),
        mir=mir_val,
        hdr=hdr_val,
        train_accuracy=float(np.mean(pred == unit.labels)),
    )


@dataclass(frozen=True)
class ConvergenceQuery:
    """Band test for the convergence detector.

    maximize: the EWMA must stay at or above ``target - tolerance * scale``;
    minimize: at or below ``target + tolerance * scale``. ``scale`` defaults
    to the target (maximize) or the first raw value of the series (minimize).
    """

    metric: str
    direction: str
    target: float
    tolerance: float = 0.05
    alpha: float = 0.1
    scale: Optional[float] = None

    def __post_init__(self):
        if self.direction not in ("maximize", "minimize"):
            raise ValueError("direction must be 'maximize' or 'minimize'")
        if not 0 < self.tolerance < 1:
            raise ValueError("tolerance fraction must lie in (0, 1)")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")


def metric_series(trace, metric: str) -> tuple[np.ndarray, np.ndarray]:
    """(iterations, values) of one metric from a trace's records."""
    name = _ALIASES.get(metric, metric)
    if name == "loss":
        vals = [r.loss for r in trace.records]
    elif name in NCReport.__dataclass_fields__:
        vals = [getattr(r.report, name) for r in trace.records]
    else:
        raise ValueError(f"unknown metric name {metric!r}")
    iters = [r.iteration for r in trace.records]
    return np.asarray(iters), np.asarray(vals, dtype=np.float64)


def ewma(values, alpha: float) -> np.ndarray:
    out = np.empty(len(values))
    acc = values[0]
    for k, v in enumerate(values):
        acc = v if k == 0 else alpha * v + (1 - alpha) * acc
        out[k] = acc
    return out


def convergence_iteration(trace, query: ConvergenceQuery):
    """Earliest logged iteration from which the EWMA stays in band to the end; None if never."""
    iters, vals = metric_series(trace, query.metric)
    if len(vals) == 0:
        raise ValueError("empty trace")
    smooth = ewma(vals, query.alpha)
    if query.direction == "maximize":
        scale = query.target if query.scale is None else query.scale
        inside = smooth >= query.target - query.tolerance * scale
    else:
        scale = vals[0] if query.scale is None else query.scale
        inside = smooth <= query.target + query.tolerance * scale
    if not inside[-1]:
        return None
    k = len(inside) - 1
    while k > 0 and inside[k - 1]:
        k -= 1
    return int(iters[k])


# Theoretical optima per metric, as functions of K.
_MAXIMIZE = {
    "erank_inter": lambda K: K - 1.0,
    "erank_weights": lambda K: K - 1.0,
    "mir": lambda K: 1.0,
}
_MINIMIZE = ("erank_intra", "weight_alignment", "instance_alignment", "hdr")


def nc_threshold_query(metric: str, num_classes: int, initial_value: float,
                       tolerance: float = 0.05, alpha: float = 0.1) -> ConvergenceQuery:
    """Query for the 95% NC threshold: 0.95 x optimum, or 0.05 x the initial value."""
    name = _ALIASES.get(metric, metric)
    if name in _MAXIMIZE:
        opt = _MAXIMIZE[name](num_classes)
        return ConvergenceQuery(name, "maximize", 0.95 * opt, tolerance, alpha, scale=opt)
    if name in _MINIMIZE:
        return ConvergenceQuery(name, "minimize", 0.05 * initial_value, tolerance, alpha,
                                scale=initial_value)
    raise ValueError(f"no NC threshold defined for metric {metric!r}")
