import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusedl0.prox import (
    ProxParams,
    brute_force_prox,
    fused_objective,
    prox_fused_l0,
    prox_scaled,
    segments,
    stage_functions,
)


def test_three_equal_entries_stay_fused():
    res = prox_fused_l0(np.ones(3), ProxParams(0.5, 0.1, -10, 10))
    np.testing.assert_array_equal(res.x, np.ones(3))
    assert res.objective == pytest.approx(0.3)
    assert res.blocks == [(0, 3, 1.0)]


def test_small_entries_are_zeroed():
    res = prox_fused_l0(np.array([0.1, 0.1]), ProxParams(1.0, 1.0))
    np.testing.assert_array_equal(res.x, np.zeros(2))
    assert res.objective == pytest.approx(0.01)


def test_no_penalty_is_box_projection():
    z = np.array([-3.0, 0.5, 2.5, -0.2])
    res = prox_fused_l0(z, ProxParams(0.0, 0.0, -1.0, 2.0))
    np.testing.assert_allclose(res.x, np.clip(z, -1, 2))


def test_degenerate_box_forces_zero():
    z = np.array([1.0, 2.0, 3.0])
    res = prox_fused_l0(z, ProxParams(0.1, 0.1, [0, -5, 0], [0, 5, 0]))
    assert res.x[0] == 0.0 and res.x[2] == 0.0
    assert res.x[1] == pytest.approx(2.0)


def random_params(rng, n):
    lo = -rng.uniform(0, 2, n) * (rng.random(n) < 0.8)
    hi = rng.uniform(0, 2, n) * (rng.random(n) < 0.8)
    return ProxParams(rng.uniform(0.01, 2), rng.uniform(0.01, 2), lo, hi)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_matches_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-2, 2, n)
    p = random_params(rng, n)
    dp = prox_fused_l0(z, p)
    bf = brute_force_prox(z, p)
    assert dp.objective == pytest.approx(bf.objective, abs=1e-9)
    assert fused_objective(dp.x, z, p) == pytest.approx(dp.objective, abs=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_output_structure(n, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(0, 2, n)
    p = random_params(rng, n)
    res = prox_fused_l0(z, p)
    lo, hi = p.bounds(n)
    assert np.all(res.x >= lo) and np.all(res.x <= hi)
    # blocks tile [0, n) and neighbours differ
    assert res.blocks[0][0] == 0 and res.blocks[-1][1] == n
    for (s0, e0, v0), (s1, e1, v1) in zip(res.blocks, res.blocks[1:]):
        assert e0 == s1 and v0 != v1
    # prefix optima can only grow
    assert np.all(np.diff(res.stage_values) >= -1e-12)
    assert res.stage_values[-1] == pytest.approx(res.objective, rel=1e-12, abs=1e-12)


def test_stage_functions_agree_with_kernel():
    rng = np.random.default_rng(3)
    z = rng.normal(size=12)
    p = ProxParams(0.3, 0.2, -2, 2)
    fs = stage_functions(z, p)
    res = prox_fused_l0(z, p)
    np.testing.assert_allclose([f.global_min()[1] for f in fs], res.stage_values, atol=1e-12)


def test_prox_scaled_matches_rescaled_problem():
    rng = np.random.default_rng(4)
    z = rng.normal(size=30)
    p = ProxParams(0.8, 0.4, -1.5, 1.5)
    mu = 3.0
    res = prox_scaled(z, mu, p)
    ref = prox_fused_l0(z, ProxParams(0.8 / mu, 0.4 / mu, -1.5, 1.5))
    np.testing.assert_array_equal(res.x, ref.x)
    assert res.objective == pytest.approx(mu * ref.objective)
    direct = 0.5 * mu * np.sum((res.x - z) ** 2) + 0.8 * np.count_nonzero(np.diff(res.x)) \
        + 0.4 * np.count_nonzero(res.x)
    assert res.objective == pytest.approx(direct)


def test_pieces_stay_small_on_long_inputs():
    rng = np.random.default_rng(5)
    res = prox_fused_l0(rng.normal(size=2000), ProxParams(1.0, 1.0, -3, 3))
    assert res.n_pieces_max < 200


def test_segments():
    assert segments(np.array([1.0, 1.0, 0.0, 2.0, 2.0])) == [(0, 2, 1.0), (2, 3, 0.0),
                                                            (3, 5, 2.0)]
    assert segments(np.array([])) == []


def test_validation():
    with pytest.raises(ValueError):
        ProxParams(-1.0, 0.0)
    with pytest.raises(ValueError):
        ProxParams(1.0, 1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        prox_fused_l0(np.array([]), ProxParams(1, 1))
    with pytest.raises(ValueError):
        prox_fused_l0(np.array([np.nan]), ProxParams(1, 1))
    with pytest.raises(ValueError):
        brute_force_prox(np.zeros(13), ProxParams(1, 1))
    with pytest.raises(ValueError):
        prox_scaled(np.zeros(2), 0.0, ProxParams(1, 1))
    assert fused_objective(np.array([3.0]), np.zeros(1), ProxParams(0, 0, -1, 1)) == np.inf
