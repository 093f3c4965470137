import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensorball import (
    DegeneracyError,
    ExperimentConfig,
    HypothesisViolationError,
    SimpleTensor,
    SminTailResult,
    SmoothedEnsemble,
    ValidationError,
    flatten,
    khatri_rao,
    pinv_hs_norm_sq,
    projection_distance_sum,
    sample_smoothed,
    sample_smoothed_factors,
    smin_tail_experiment,
)


def test_khatri_rao_single_columns():
    out = khatri_rao([np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]])])
    assert out.shape == (4, 1)
    assert np.array_equal(out[:, 0], [3.0, 4.0, 6.0, 8.0])


def test_khatri_rao_identity_pair():
    out = khatri_rao([np.eye(2), np.eye(2)])
    assert np.array_equal(out[:, 0], [1, 0, 0, 0])
    assert np.array_equal(out[:, 1], [0, 0, 0, 1])


def test_khatri_rao_rejects_bad_input():
    with pytest.raises(ValidationError):
        khatri_rao([])
    with pytest.raises(ValidationError):
        khatri_rao([np.ones((2, 3)), np.ones((2, 2))])


@given(st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_khatri_rao_columns_are_flattened_rank_one(seed):
    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((3, 2)), rng.standard_normal((2, 2)), rng.standard_normal((4, 2))]
    kr = khatri_rao(mats)
    assert kr.shape == (24, 2)
    for i in range(2):
        t = SimpleTensor(factors=tuple(m[:, i] for m in mats))
        assert np.allclose(kr[:, i], flatten(t).data, atol=1e-12)


def test_pinv_hs_diagonal():
    assert pinv_hs_norm_sq(np.diag([1.0, 2.0])) == pytest.approx(1.25)


def test_pinv_hs_orthonormal_rows():
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((7, 3)))
    assert pinv_hs_norm_sq(q.T) == pytest.approx(3.0)


def test_pinv_hs_rejects_singular():
    a = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(DegeneracyError):
        pinv_hs_norm_sq(a)


def test_projection_distance_single_row():
    v = np.array([[3.0, 4.0]])
    assert projection_distance_sum(v) == pytest.approx(1.0 / 25.0)


def test_projection_distance_names_dependent_row():
    a = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
    with pytest.raises(DegeneracyError, match="row"):
        projection_distance_sum(a)


@given(st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_pinv_identity_two_routes_agree(seed):
    """SVD route and row-distance route compute the same functional."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((4, 9))
    lhs = pinv_hs_norm_sq(a)
    rhs = projection_distance_sum(a)
    assert abs(lhs - rhs) <= 1e-8 * max(lhs, rhs)


@given(st.integers(0, 10**6))
@settings(max_examples=30, deadline=None)
def test_singular_value_sandwich(seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, 6))
    a = rng.standard_normal((r, r + 5))
    smin = np.linalg.svd(a, compute_uv=False)[-1]
    val = pinv_hs_norm_sq(a)
    assert 1.0 / smin**2 <= val * (1 + 1e-12)
    assert val <= r / smin**2 * (1 + 1e-12)


def test_ensemble_zero_rho_reproduces_base():
    e = SmoothedEnsemble.random(3, 4, 2, 0.0, rng=1)
    mats = sample_smoothed_factors(e, np.random.default_rng(99))
    for got, want in zip(mats, e.base):
        assert np.array_equal(got, want)
    assert np.array_equal(sample_smoothed(e, 5), khatri_rao(e.base))


def test_ensemble_seeded_draws_identical():
    e = SmoothedEnsemble.random(2, 5, 3, 0.7, rng=4)
    a = sample_smoothed(e, np.random.default_rng(11))
    b = sample_smoothed(e, np.random.default_rng(11))
    assert np.array_equal(a, b)
    assert a.shape == (125, 2)


def test_ensemble_base_columns_on_cap_sphere():
    e = SmoothedEnsemble.random(4, 6, 2, 0.3, norm_cap=0.5, rng=2)
    for b in e.base:
        assert np.allclose(np.linalg.norm(b, axis=0), 0.5, atol=1e-12)


def test_ensemble_validation():
    ok = np.zeros((3, 2))
    with pytest.raises(ValidationError):
        SmoothedEnsemble(r=2, n=3, ell=2, rho=-0.1, base=(ok, ok))
    with pytest.raises(ValidationError):
        SmoothedEnsemble(r=2, n=3, ell=2, rho=0.1, base=(ok,))
    big = np.full((3, 2), 2.0)
    with pytest.raises(ValidationError, match="norm_cap"):
        SmoothedEnsemble(r=2, n=3, ell=2, rho=0.1, base=(big, big), norm_cap=1.0)


def test_ensemble_json_round_trip():
    e = SmoothedEnsemble.random(3, 4, 2, 0.25, norm_cap=0.9, rng=7)
    back = SmoothedEnsemble.from_json(e.to_json())
    assert back.r == e.r and back.rho == e.rho and back.norm_cap == e.norm_cap
    for a, b in zip(back.base, e.base):
        assert np.array_equal(a, b)


def smin_cfg(grid, trials=200, seed=0):
    return ExperimentConfig(seed=seed, trials=trials, epsilon_grid=grid, batch_size=100)


def test_smin_tail_thresholds_and_labels():
    e = SmoothedEnsemble.random(3, 3, 2, 0.5, rng=0)
    grid = (0.1, 0.01)
    res = smin_tail_experiment(e, smin_cfg(grid))
    assert isinstance(res, SminTailResult)
    assert res.curve.scaling == "smin-threshold"
    pre = math.sqrt(1 - 3 / 9) * (0.5) ** 2
    assert res.thresholds == pytest.approx((pre * 0.1, pre * 0.01))


def test_smin_tail_tiny_eps_never_hits():
    e = SmoothedEnsemble.random(2, 3, 2, 0.2, rng=3)
    res = smin_tail_experiment(e, smin_cfg((1e-10, 1e-12)))
    assert res.curve.hit_counts == (0, 0)


def test_smin_tail_bound_validity_window():
    """Bound values only where eps < exp(-C_main * ell); NaN outside."""
    e = SmoothedEnsemble.random(2, 3, 2, 0.5, rng=1)
    grid = (0.5, math.exp(-2) * 0.9, 1e-4)
    res = smin_tail_experiment(e, smin_cfg(grid))
    assert math.isnan(res.bound_values[0])
    assert res.bound_values[1] > 0
    assert res.bound_values[2] > 0
    assert res.bound_values[2] < res.bound_values[1]


def test_smin_tail_rejects_bad_regimes():
    crowded = SmoothedEnsemble.random(5, 3, 1, 0.5, rng=0)
    with pytest.raises(HypothesisViolationError):
        smin_tail_experiment(crowded, smin_cfg((0.1, 0.01)))
    frozen = SmoothedEnsemble.random(2, 3, 2, 0.0, rng=0)
    with pytest.raises(ValidationError):
        smin_tail_experiment(frozen, smin_cfg((0.1, 0.01)))


def test_smin_tail_counts_agree_with_direct_svd():
    """Replay the experiment's own stream and recount by hand."""
    e = SmoothedEnsemble.random(2, 3, 2, 0.8, rng=6)
    cfg = ExperimentConfig(seed=9, trials=150, epsilon_grid=(0.8, 0.3), batch_size=150)
    res = smin_tail_experiment(e, cfg)
    rng = np.random.default_rng(np.random.SeedSequence(9, spawn_key=(0,)))
    sigma = 0.8 / math.sqrt(3)
    mats = [e.base[j][None] + sigma * rng.standard_normal((150, 3, 2)) for j in range(2)]
    hits = np.zeros(2, dtype=int)
    for b in range(150):
        kr = khatri_rao([mats[0][b], mats[1][b]])
        smin = np.linalg.svd(kr, compute_uv=False)[-1]
        hits += smin <= np.asarray(res.thresholds)
    assert res.curve.hit_counts == tuple(hits)
