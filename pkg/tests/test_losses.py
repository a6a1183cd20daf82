import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as o
from conftest import collapsed_batch, unit_rows
from frozen import FROZEN
from ncsphere.geometry import EmbeddingBatch, class_means
from ncsphere.losses import (
    ce_loss, class_level_nonl, class_level_ntce, finite_diff_gradient, lstar_loss, nonl_loss,
    normface_loss, ntce_loss, proto_loss, scl_loss,
)


def _random_batch(seed, K=3, n=3, d=4):
    r = np.random.default_rng(seed)
    labels = np.repeat(np.arange(K), n)
    return EmbeddingBatch(unit_rows(r, K * n, d), labels, K), r.normal(size=(K, d))


def test_ce_examples():
    b = EmbeddingBatch([[1.0, 0.0]], [0], 2)
    assert ce_loss(b, np.eye(2), [0, 0]).value == pytest.approx(FROZEN["ce_hand"], abs=1e-15)
    flat = EmbeddingBatch(np.zeros((3, 2)), [0, 1, 2], 3)
    assert ce_loss(flat, np.ones((3, 2)), np.zeros(3)).value == pytest.approx(math.log(3), abs=1e-15)
    W = np.array([[1.0, 0.0], [-1.0, 0.0]])
    sat = EmbeddingBatch(100 * W[:1], [0], 2)
    assert ce_loss(sat, W, np.zeros(2)).value < 1e-10


def test_ce_rejects_bad_bias():
    b = EmbeddingBatch([[1.0, 0.0]], [0], 2)
    with pytest.raises(ValueError, match="bias"):
        ce_loss(b, np.eye(2), [0.0])


def test_normface_examples():
    b = EmbeddingBatch([[1.0]], [0], 2)
    v = normface_loss(b, np.array([[1.0], [-1.0]]), 1.0).value
    assert v == pytest.approx(FROZEN["normface_k2_antipodal"], abs=1e-15)
    batch, E = collapsed_batch(10, 1, 16)
    assert normface_loss(batch, E, 1.0).value == pytest.approx(FROZEN["normface_nc_k10"], abs=1e-13)
    # orthogonal feature: all similarities 0
    eq = EmbeddingBatch([[0.0, 1.0]], [0], 3)
    W = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    assert normface_loss(eq, W, 0.3).value == pytest.approx(math.log(3), abs=1e-15)


def test_ntce_examples():
    one = EmbeddingBatch([[0.6, 0.8]], [0], 2)
    assert ntce_loss(one, np.eye(2), 0.1).value == 0.0
    batch, E = collapsed_batch(10, 5, 16)
    assert ntce_loss(batch, E, 1.0).value == pytest.approx(FROZEN["ntce_nc_k10_n5"], abs=1e-13)


@pytest.mark.parametrize("n", [1, 2, 7])
def test_ntce_offset_at_collapse(n):
    batch, E = collapsed_batch(3, n, 5, seed=n)
    gap = ntce_loss(batch, E, 0.3).value - normface_loss(batch, E, 0.3).value
    assert gap == pytest.approx(math.log(n), abs=1e-12)


def test_nonl_examples():
    batch, E = collapsed_batch(2, 1, 1)
    assert nonl_loss(batch, E, 1.0).value == pytest.approx(FROZEN["nonl_nc_k2_n1"], abs=1e-15)
    single = EmbeddingBatch(np.eye(2), [0, 0], 2)
    with pytest.raises(ValueError, match="no negatives"):
        nonl_loss(single, np.eye(2), 0.1)


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.floats(0.05, 2.0))
def test_nonl_below_ntce(seed, tau):
    batch, W = _random_batch(seed)
    assert nonl_loss(batch, W, tau).value < ntce_loss(batch, W, tau).value


@pytest.mark.parametrize("seed", range(3))
def test_losses_match_reference_on_random_configs(seed):
    batch, W = _random_batch(seed, K=3, n=2, d=3)
    U, y, tau = batch.features.tolist(), batch.labels.tolist(), 0.4
    Wl = W.tolist()
    assert normface_loss(batch, W, tau).value == pytest.approx(float(o.normface(U, y, Wl, tau)), abs=1e-13)
    assert ntce_loss(batch, W, tau).value == pytest.approx(float(o.ntce(U, y, Wl, tau)), abs=1e-13)
    assert nonl_loss(batch, W, tau).value == pytest.approx(float(o.nonl(U, y, Wl, tau)), abs=1e-13)
    assert scl_loss(batch, tau).value == pytest.approx(float(o.scl(U, y, tau)), abs=1e-13)
    assert proto_loss(batch, tau).value == pytest.approx(float(o.proto(U, y, tau)), abs=1e-13)
    b = np.random.default_rng(seed).normal(size=3)
    want = sum(float(o.ce(u, Wl, b.tolist(), c)) for u, c in zip(U, y)) / len(U)
    assert ce_loss(batch, W, b).value == pytest.approx(want, abs=1e-13)


def _antipodal():
    return EmbeddingBatch(np.array([[1.0], [1.0], [-1.0], [-1.0]]), [0, 0, 1, 1], 2)


def test_scl_proto_lstar_antipodal_example():
    b = _antipodal()
    assert scl_loss(b, 1.0).value == pytest.approx(FROZEN["scl_antipodal"], abs=1e-15)
    assert proto_loss(b, 1.0).value == pytest.approx(FROZEN["proto_antipodal"], abs=1e-15)
    assert lstar_loss(b, 1.0) == pytest.approx(FROZEN["lstar_antipodal"], abs=1e-15)
    assert scl_loss(b, 0.5).value == pytest.approx(FROZEN["scl_antipodal_tau05"], abs=1e-15)


def test_scl_permutation_invariance():
    batch, _ = _random_batch(4, K=3, n=4)
    perm = np.random.default_rng(0).permutation(batch.size)
    assert scl_loss(batch.permuted(perm), 0.2).value == pytest.approx(scl_loss(batch, 0.2).value, abs=1e-14)


def test_scl_proto_errors():
    with pytest.raises(ValueError, match="isolated anchor"):
        scl_loss(EmbeddingBatch(np.eye(2), [0, 1], 2), 0.5)
    with pytest.raises(ValueError, match="single class"):
        proto_loss(EmbeddingBatch(np.ones((3, 2)) / math.sqrt(2), [0, 0, 0], 1), 0.5)
    with pytest.raises(ValueError, match="single class"):
        lstar_loss(EmbeddingBatch(np.eye(2), [0, 0], 1), 0.5)
    with pytest.raises(ValueError, match="temperature"):
        scl_loss(_antipodal(), 0.0)


@pytest.mark.parametrize("K", [2, 3, 5, 10])
def test_collapsed_simplex_makes_bound_tight(K):
    batch, _ = collapsed_batch(K, 3, 12)
    lstar = lstar_loss(batch, 0.5)
    assert scl_loss(batch, 0.5).value == pytest.approx(lstar, abs=1e-9)
    assert proto_loss(batch, 0.5).value == pytest.approx(lstar, abs=1e-9)


@settings(max_examples=60)
@given(st.integers(0, 100_000), st.integers(2, 5), st.integers(2, 4), st.floats(0.2, 2.0))
def test_lstar_lower_bounds_scl_and_proto(seed, K, n, tau):
    batch, _ = _random_batch(seed, K, n, d=4)
    try:
        bound = lstar_loss(batch, tau)
    except ValueError:
        return  # outside the bound's domain
    assert scl_loss(batch, tau).value >= bound - 1e-12
    assert proto_loss(batch, tau).value >= bound - 1e-12


def test_class_level_examples():
    _, E = collapsed_batch(10, 1, 16)
    assert class_level_ntce(E, E, 1.0, 5) == pytest.approx(FROZEN["ntce_nc_k10_n5"], abs=1e-13)
    assert class_level_ntce(E, E, 1.0, 1) == pytest.approx(FROZEN["normface_nc_k10"], abs=1e-13)
    _, E2 = collapsed_batch(2, 1, 1)
    assert class_level_nonl(E2, E2, 1.0, 1) == pytest.approx(-2.0, abs=1e-15)
    with pytest.raises(ValueError, match="K >= 2"):
        class_level_nonl(E2[:1], E2[:1], 1.0, 1)


@settings(max_examples=60)
@given(st.integers(0, 100_000), st.integers(2, 5), st.integers(1, 4), st.floats(0.1, 2.0))
def test_class_level_lower_bounds_sample_level(seed, K, n, tau):
    batch, W = _random_batch(seed, K, n, d=5)
    mu = class_means(batch)
    assert ntce_loss(batch, W, tau).value >= class_level_ntce(mu, W, tau, n) - 1e-12
    assert nonl_loss(batch, W, tau).value >= class_level_nonl(mu, W, tau, n) - 1e-12


def test_finite_diff_examples():
    g = finite_diff_gradient(lambda x: float(x[0] ** 2), np.array([3.0]))[0]
    assert g[0] == pytest.approx(6.0, abs=1e-8)
    assert np.all(finite_diff_gradient(lambda x: 1.0, np.ones(3))[0] == 0)
    with pytest.raises(ValueError):
        finite_diff_gradient(lambda x: 0.0, np.ones(1), h=1.0)


def _rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


@pytest.mark.parametrize("kind", ["normface", "ntce", "nonl"])
def test_prototype_loss_gradients(kind):
    fn = {"normface": normface_loss, "ntce": ntce_loss, "nonl": nonl_loss}[kind]
    batch, W = _random_batch(7, K=3, n=2, d=4)
    y = batch.labels
    ev = fn(batch, W, 0.5)
    gU, gW = finite_diff_gradient(lambda U, V: fn(EmbeddingBatch(U, y, 3), V, 0.5).value, [batch.features, W])
    assert _rel_err(ev.grad_features, gU) < 1e-6
    assert _rel_err(ev.grad_prototypes, gW) < 1e-6


def test_ce_scl_proto_gradients():
    batch, W = _random_batch(8, K=3, n=2, d=4)
    y, b = batch.labels, np.array([0.1, -0.2, 0.3])
    ev = ce_loss(batch, W, b)
    gZ, gW, gb = finite_diff_gradient(lambda Z, V, c: ce_loss(EmbeddingBatch(Z, y, 3), V, c).value,
                                      [batch.features, W, b])
    for a, fd in ((ev.grad_features, gZ), (ev.grad_prototypes, gW), (ev.grad_bias, gb)):
        assert _rel_err(a, fd) < 1e-6
    for fn in (scl_loss, proto_loss):
        g = fn(batch, 0.5).grad_features
        fd = finite_diff_gradient(lambda A: fn(EmbeddingBatch(A, y, 3), 0.5).value, batch.features)[0]
        assert _rel_err(g, fd) < 1e-6
