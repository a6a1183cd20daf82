import math

import numpy as np
import pytest

from conftest import collapsed_batch
from ncsphere import verify

FAST_CHECKS = {
    "jensen_ntce": lambda j: verify.check_jensen_ntce(trials=200, inject=j),
    "jensen_nonl": lambda j: verify.check_jensen_nonl(trials=200, inject=j),
    "jensen_tightness": lambda j: verify.check_jensen_tightness(trials=50, inject=j),
    "scl_proto_bounds": lambda j: verify.check_scl_proto_bounds(trials=200, inject=j),
    "scl_proto_tightness": lambda j: verify.check_scl_proto_tightness(inject=j),
    "normface_equivalence": lambda j: verify.check_normface_equivalence(trials=30, inject=j),
    "normface_gradient": lambda j: verify.check_normface_gradient(trials=30, inject=j),
    "ntce_offset": lambda j: verify.check_ntce_offset(trials=50, inject=j),
}


@pytest.mark.parametrize("name", sorted(FAST_CHECKS))
def test_check_passes_and_detects_injection(name):
    clean = FAST_CHECKS[name](False)
    assert clean.passed and clean.violation <= clean.tolerance, clean
    planted = FAST_CHECKS[name](True)
    assert not planted.passed and planted.violation > planted.tolerance


def test_checks_are_deterministic():
    a = verify.check_scl_proto_bounds(trials=100, seed=3)
    b = verify.check_scl_proto_bounds(trials=100, seed=3)
    assert a == b
    assert a.details["draws"] >= a.trials


def test_nc_geometry_at_exact_collapse_is_zero():
    batch, E = collapsed_batch(10, 4, 16)
    geo = verify.nc_geometry(batch, E)
    assert max(geo.values()) < 1e-12
    wrong = verify.nc_geometry(batch, E, target=-1 / 10)
    assert wrong["nc2_cosine_dev"] == pytest.approx(1 / 9 - 1 / 10, abs=1e-12)


def test_collapsed_simplex_batch():
    batch = verify.collapsed_simplex_batch(3, 7, 4)
    assert batch.size == 21 and verify.nc_geometry(batch)["nc1_max_spread"] < 1e-15


def test_nc_optimality_small_and_injected():
    kw = dict(seeds=(0,), num_classes=4, per_class=5, dim=6, tau=0.2, steps=3000)
    res = verify.check_nc_optimality("nonl", **kw)
    assert res.passed, res.details
    assert not verify.check_nc_optimality("nonl", inject=True, **kw).passed
    with pytest.raises(ValueError):
        verify.check_nc_optimality("scl")


def test_ce_fails_nc_optimality_at_same_budget():
    res = verify.check_nc_optimality("ce", seeds=(0,), num_classes=4, per_class=5, dim=6, tau=0.2,
                                     steps=3000)
    assert not res.passed


def test_run_all_rejects_unknown_injection():
    with pytest.raises(ValueError, match="unknown check"):
        verify.run_all(inject="everything")


def test_check_result_serializes():
    d = verify.check_ntce_offset(trials=5).as_dict()
    assert d["name"] == "ntce_offset" and math.isfinite(d["violation"])
    assert set(verify.CHECKS) >= set(FAST_CHECKS)


@pytest.mark.parametrize("K", [3, 5, 10, 50])
def test_injected_nc_target_exceeds_tolerance(K):
    assert abs(verify.INJECTED_NC2_TARGET + 1.0 / (K - 1)) > verify.NC2_TOL
