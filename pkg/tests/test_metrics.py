import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import collapsed_batch, unit_rows
from frozen import FROZEN
from ncsphere.geometry import EmbeddingBatch, gram, simplex_etf
from ncsphere.metrics import (
    ConvergenceQuery, convergence_iteration, effective_rank, erank_inter, erank_intra, erank_weights,
    ewma, hdr, instance_alignment, matrix_entropy, mir, nc_report, nc_threshold_query, weight_alignment,
)
from ncsphere.numerics import RandomSource
from ncsphere.optim import RunTrace


def test_effective_rank_examples():
    for r in (1, 2, 5, 17):
        assert effective_rank(np.full(r, 2.5)) == pytest.approx(r, abs=1e-12)
    assert effective_rank([4.0, 0.0, 0.0]) == 1.0
    assert effective_rank([3.0, 1.0]) == pytest.approx(FROZEN["erank_3_1"], abs=1e-15)
    assert effective_rank(np.zeros(4)) == 0.0


@settings(max_examples=80)
@given(st.lists(st.one_of(st.just(0.0), st.floats(1e-200, 1e3)), min_size=1, max_size=12),
       st.floats(1e-3, 1e3))
def test_effective_rank_scale_invariant_and_bounded(s, c):
    s = np.array(s)
    e = effective_rank(s)
    assert effective_rank(c * s) == pytest.approx(e, rel=1e-9, abs=1e-12)
    assert 0 <= e <= np.count_nonzero(s) + 1e-9


def test_erank_intra_examples():
    batch, _ = collapsed_batch(4, 5, 8)
    assert erank_intra(batch) == 0.0
    single, _ = collapsed_batch(4, 1, 8)
    assert erank_intra(single) == 0.0
    r = np.random.default_rng(0)
    X = np.zeros((4000, 6))
    X[:, :3] = r.normal(size=(4000, 3))
    labels = np.repeat([0, 1], 2000)
    assert erank_intra(EmbeddingBatch(X, labels, 2)) == pytest.approx(3.0, abs=0.2)


def test_erank_inter_examples():
    batch, _ = collapsed_batch(10, 2, 16)
    assert erank_inter(batch) == pytest.approx(9.0, abs=1e-6)
    same = EmbeddingBatch(np.tile([1.0, 0.0], (4, 1)), [0, 0, 1, 1], 2)
    assert erank_inter(same) == 0.0
    ang = 2 * np.pi * np.arange(3) / 3
    tri = np.stack([np.cos(ang), np.sin(ang), np.zeros(3)], axis=1)
    assert erank_inter(EmbeddingBatch(tri, [0, 1, 2], 3)) == pytest.approx(2.0, abs=1e-6)


@pytest.mark.parametrize("K", [2, 3, 7, 16, 32])
def test_erank_inter_of_etf_is_k_minus_one(K):
    batch, _ = collapsed_batch(K, 1, K + 1, seed=K)
    assert erank_inter(batch) == pytest.approx(K - 1, abs=1e-6)


def test_erank_weights_examples():
    E = simplex_etf(10, 16, RandomSource(0)).directions
    assert erank_weights(E) == pytest.approx(9.0, abs=1e-6)
    assert erank_weights(np.eye(3)) == pytest.approx(3.0, abs=1e-12)
    assert erank_weights(np.tile([0.6, 0.8], (4, 1))) == pytest.approx(1.0, abs=1e-6)


def test_alignment_examples():
    W = np.eye(2)
    assert weight_alignment(EmbeddingBatch(np.eye(2), [0, 1], 2), W) == 0.0
    assert weight_alignment(EmbeddingBatch([[-1.0, 0.0]], [0], 2), W) == pytest.approx(4.0)
    assert weight_alignment(EmbeddingBatch([[0.0, 1.0]], [0], 2), W) == pytest.approx(2.0)
    batch, _ = collapsed_batch(3, 4, 5)
    assert instance_alignment(batch) == pytest.approx(0.0, abs=1e-28)
    assert instance_alignment(EmbeddingBatch([[1.0, 0.0], [-1.0, 0.0]], [0, 0], 1)) == pytest.approx(4.0)
    assert instance_alignment(EmbeddingBatch(np.eye(2), [0, 0], 1)) == pytest.approx(2.0)


@settings(max_examples=40)
@given(st.integers(0, 100_000))
def test_alignments_invariant_under_rotation(seed):
    r = np.random.default_rng(seed)
    U = unit_rows(r, 9, 4)
    W = unit_rows(r, 3, 4)
    Q, _ = np.linalg.qr(r.normal(size=(4, 4)))
    b, rb = EmbeddingBatch(U, np.arange(9) % 3, 3), EmbeddingBatch(U @ Q, np.arange(9) % 3, 3)
    assert weight_alignment(rb, W @ Q) == pytest.approx(weight_alignment(b, W), abs=1e-12)
    assert instance_alignment(rb) == pytest.approx(instance_alignment(b), abs=1e-12)


def test_instance_alignment_matches_pairwise_definition():
    r = np.random.default_rng(3)
    U = unit_rows(r, 12, 5)
    labels = np.arange(12) % 3
    want = []
    for c in range(3):
        rows = U[labels == c]
        d = [np.sum((rows[i] - rows[j]) ** 2) for i in range(len(rows)) for j in range(i + 1, len(rows))]
        want.append(np.mean(d))
    assert instance_alignment(EmbeddingBatch(U, labels, 3)) == pytest.approx(np.mean(want), abs=1e-14)


def test_matrix_entropy_examples():
    assert matrix_entropy(np.eye(4) / 4) == pytest.approx(math.log(4), abs=1e-14)
    v = np.array([0.6, 0.8])
    assert matrix_entropy(np.outer(v, v)) == pytest.approx(0.0, abs=1e-14)
    assert matrix_entropy(np.diag([0.75, 0.25])) == pytest.approx(FROZEN["entropy_075_025"], abs=1e-15)
    with pytest.raises(ValueError, match="trace 1"):
        matrix_entropy(np.eye(2))


def test_mir_hdr_examples():
    E = simplex_etf(10, 16, RandomSource(0)).directions
    G = gram(E, trace_normalize=True)
    assert hdr(G, G) == 0.0
    assert abs(mir(G, G) - 1) <= 0.05
    GM = np.array([[0.5, 0.25], [0.25, 0.5]])  # trace-normalized Gram of a 60 degree pair
    assert mir(np.eye(2) / 2, GM) == pytest.approx(FROZEN["mir_k2_60deg"], abs=1e-14)
    assert hdr(np.eye(2) / 2, GM) == pytest.approx(FROZEN["hdr_k2_60deg"], abs=1e-14)
    rank1 = np.full((2, 2), 0.5)
    with pytest.raises(ValueError, match="degenerate entropy"):
        mir(rank1, rank1)


def test_nc_report_at_exact_collapse():
    batch, E = collapsed_batch(10, 3, 16)
    rep = nc_report(batch, E)
    assert rep.erank_intra == pytest.approx(0, abs=1e-6)
    assert rep.erank_inter == pytest.approx(9, abs=1e-6)
    assert rep.erank_weights == pytest.approx(9, abs=1e-6)
    assert rep.weight_alignment == pytest.approx(0, abs=1e-6)
    assert rep.instance_alignment == pytest.approx(0, abs=1e-6)
    assert rep.hdr == pytest.approx(0, abs=1e-6)
    assert rep.train_accuracy == 1.0


def test_nc_report_random_is_finite_and_normalizes_raw_features():
    r = np.random.default_rng(0)
    X = r.normal(size=(30, 6)) * 5
    labels = np.arange(30) % 3
    rep = nc_report(EmbeddingBatch(X, labels, 3), r.normal(size=(3, 6)))
    assert all(np.isfinite(v) for v in rep.as_dict().values())
    scaled = nc_report(EmbeddingBatch(X * r.uniform(0.1, 10, (30, 1)), labels, 3))
    base = nc_report(EmbeddingBatch(X, labels, 3)).as_dict()
    for key, value in scaled.as_dict().items():
        assert value == pytest.approx(base[key], abs=1e-12), key


def _trace(values, step=10):
    t = RunTrace()
    for k, v in enumerate(values):
        rep = nc_report(collapsed_batch(3, 1, 2)[0])
        rep = type(rep)(**{**rep.as_dict(), "erank_intra": float(v)})
        t.append(k * step, 0.0, rep)
    return t


def _brute_force(values, lo, hi, alpha, step=10):
    smooth, acc = [], None
    for v in values:
        acc = v if acc is None else alpha * v + (1 - alpha) * acc
        smooth.append(acc)
    for k in range(len(values)):
        if all(lo <= s <= hi for s in smooth[k:]):
            return k * step
    return None


def test_convergence_iteration_examples():
    q = ConvergenceQuery("erank_intra", "minimize", 1.0, 0.05, 1.0, scale=10.0)
    assert convergence_iteration(_trace([1.0] * 5), q) == 0
    assert convergence_iteration(_trace([9, 7, 5, 1, 0.5, 0.2]), q) == 30
    assert convergence_iteration(_trace([9, 8, 9, 8]), q) is None
    osc = [9, 1, 9, 1, 0.5, 0.4, 0.3]
    assert convergence_iteration(_trace(osc), q) == 30


@settings(max_examples=60)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=30), st.floats(0.05, 1.0))
def test_convergence_iteration_matches_brute_force(values, alpha):
    q = ConvergenceQuery("erank_intra", "minimize", 2.0, 0.1, alpha, scale=10.0)
    assert convergence_iteration(_trace(values), q) == _brute_force(values, -np.inf, 3.0, alpha)


def test_threshold_query_conventions():
    q = nc_threshold_query("erank_inter", 10, 3.0)
    assert q.direction == "maximize" and q.target == pytest.approx(8.55)
    q = nc_threshold_query("erank_intra", 10, 12.0)
    assert q.direction == "minimize" and q.target == pytest.approx(0.6) and q.scale == 12.0
    with pytest.raises(ValueError):
        nc_threshold_query("loss", 10, 1.0)
    with pytest.raises(ValueError):
        ConvergenceQuery("mir", "maximize", 1.0, tolerance=1.5)


def test_ewma_alpha_one_is_identity():
    v = np.array([3.0, 1.0, 2.0])
    np.testing.assert_array_equal(ewma(v, 1.0), v)
    np.testing.assert_allclose(ewma(v, 0.5), [3.0, 2.0, 2.0])
