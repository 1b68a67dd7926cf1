"""Distance kernels and the link-probability map, checked against
brute-force formulas written independently of the library internals."""

import math

import numpy as np
import pytest

from stylemetric.catalog import DataError, MetricModel
from stylemetric.metric import (decide, dist_full, dist_lowrank,
                                dist_personalized, dist_weighted, embed,
                                link_probability, log_link_probability,
                                model_distances, pair_distances_style,
                                pair_distances_weighted, project_rows,
                                sigmoid, softplus)


def brute_full(M, x_i, x_j):
    delta = x_i - x_j
    return float(delta @ M @ delta)


def brute_weighted(w, x_i, x_j):
    return float(sum((wk * (a - b)) ** 2 for wk, a, b in zip(w, x_i, x_j)))


def test_lowrank_matches_full_quadratic_form():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        f = int(rng.integers(1, 17))
        k = int(rng.integers(1, f + 1))
        Y = rng.standard_normal((f, k))
        x_i = rng.standard_normal(f)
        x_j = rng.standard_normal(f)
        d_low = dist_lowrank(Y, x_i, x_j)
        d_ful = dist_full(Y @ Y.T, x_i, x_j)
        rel = abs(d_low - d_ful) / max(abs(d_ful), 1e-300)
        worst = max(worst, rel)
    assert worst < 1e-9


def test_full_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(50):
        f = int(rng.integers(1, 10))
        M = rng.standard_normal((f, f))
        M = M + M.T
        x_i, x_j = rng.standard_normal(f), rng.standard_normal(f)
        assert dist_full(M, x_i, x_j) == pytest.approx(brute_full(M, x_i, x_j), rel=1e-12)


def test_weighted_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(50):
        f = int(rng.integers(1, 10))
        w = rng.uniform(0, 2, f)
        x_i, x_j = rng.standard_normal(f), rng.standard_normal(f)
        assert dist_weighted(w, x_i, x_j) == pytest.approx(brute_weighted(w, x_i, x_j), rel=1e-12)


def test_lowrank_equals_embedded_euclidean_exactly():
    """Projecting first and differencing after must be the same float ops
    the distance kernel performs, so the two agree bit for bit."""
    rng = np.random.default_rng(3)
    for _ in range(200):
        f = int(rng.integers(1, 20))
        k = int(rng.integers(1, 8))
        Y = rng.standard_normal((f, k))
        x_i, x_j = rng.standard_normal(f), rng.standard_normal(f)
        s_i, s_j = embed(Y, x_i), embed(Y, x_j)
        direct = float(np.einsum("ij,ij->i", (s_i - s_j)[None, :], (s_i - s_j)[None, :])[0])
        assert dist_lowrank(Y, x_i, x_j) == direct


def test_symmetry_is_exact():
    rng = np.random.default_rng(4)
    for _ in range(100):
        f = int(rng.integers(1, 16))
        k = int(rng.integers(1, 5))
        Y = rng.standard_normal((f, k))
        w = rng.uniform(0, 1, f)
        uw = rng.uniform(0, 1, k)
        x_i, x_j = rng.standard_normal(f), rng.standard_normal(f)
        assert dist_lowrank(Y, x_i, x_j) == dist_lowrank(Y, x_j, x_i)
        assert dist_weighted(w, x_i, x_j) == dist_weighted(w, x_j, x_i)
        assert dist_personalized(Y, uw, x_i, x_j) == dist_personalized(Y, uw, x_j, x_i)


def test_self_distance_is_zero():
    rng = np.random.default_rng(5)
    Y = rng.standard_normal((6, 3))
    x = rng.standard_normal(6)
    assert dist_lowrank(Y, x, x) == 0.0
    assert dist_weighted(np.ones(6), x, x) == 0.0


def test_distances_are_nonnegative():
    rng = np.random.default_rng(6)
    for _ in range(200):
        Y = rng.standard_normal((8, 3))
        x_i, x_j = rng.standard_normal(8), rng.standard_normal(8)
        assert dist_lowrank(Y, x_i, x_j) >= 0.0
        assert dist_weighted(rng.uniform(0, 1, 8), x_i, x_j) >= 0.0


def test_personalized_reweights_style_dimensions():
    rng = np.random.default_rng(7)
    Y = rng.standard_normal((10, 4))
    x_i, x_j = rng.standard_normal(10), rng.standard_normal(10)
    s = (x_i - x_j) @ Y
    uw = rng.uniform(0, 2, 4)
    expected = float(np.sum((s * uw) ** 2))
    assert dist_personalized(Y, uw, x_i, x_j) == pytest.approx(expected, rel=1e-12)
    # all-ones weights recover the global metric
    assert dist_personalized(Y, np.ones(4), x_i, x_j) == pytest.approx(
        dist_lowrank(Y, x_i, x_j), rel=1e-12)


def test_personalized_rejects_negative_weights():
    Y = np.eye(3)
    with pytest.raises(DataError):
        dist_personalized(Y, np.array([1.0, -0.5, 1.0]), np.zeros(3), np.ones(3))


def test_project_rows_single_row_equals_batch():
    """One row projected alone must equal the same row projected in a batch,
    bit for bit; everything downstream leans on this."""
    rng = np.random.default_rng(8)
    X = rng.standard_normal((64, 12))
    Y = rng.standard_normal((12, 5))
    S = project_rows(X, Y)
    for i in (0, 17, 63):
        alone = project_rows(X[i : i + 1], Y)
        assert np.array_equal(alone[0], S[i])


def test_sigmoid_midpoint_and_saturation():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(1000.0) == 1.0
    assert sigmoid(-1000.0) == pytest.approx(0.0, abs=1e-300)
    # no overflow warnings at extremes
    with np.errstate(over="raise"):
        sigmoid(np.array([-1e4, -50.0, 0.0, 50.0, 1e4]))


def test_sigmoid_matches_reference_in_stable_range():
    t = np.linspace(-30, 30, 601)
    ref = 1.0 / (1.0 + np.exp(-t))
    np.testing.assert_allclose(sigmoid(t), ref, rtol=1e-14)


def test_softplus_identities():
    t = np.linspace(-40, 40, 401)
    np.testing.assert_allclose(softplus(t) - softplus(-t), t, rtol=0, atol=1e-12)
    assert softplus(0.0) == pytest.approx(math.log(2.0), rel=1e-15)
    with np.errstate(over="raise"):
        assert softplus(800.0) == 800.0


def test_link_probability_half_at_threshold():
    for c in (0.0, 0.3, 17.5, 1e-9):
        assert abs(link_probability(c, c) - 0.5) < 1e-12


def test_link_probability_monotone_decreasing_in_distance():
    d = np.linspace(0, 10, 200)
    p = link_probability(d, 3.0)
    assert np.all(np.diff(p) < 0)


def test_log_link_probability_matches_log_of_probability():
    rng = np.random.default_rng(9)
    d = rng.uniform(0, 20, 500)
    c = 5.0
    np.testing.assert_allclose(log_link_probability(d, c),
                               np.log(link_probability(d, c)), rtol=1e-12)


def test_log_link_probability_stable_at_huge_distance():
    # log p = -(d - c) asymptotically; the naive log(sigmoid) underflows here
    assert log_link_probability(1e4, 2.0) == pytest.approx(-(1e4 - 2.0), rel=1e-12)


def test_decide_strict_inequality():
    assert decide(0.999, 1.0)
    assert not decide(1.0, 1.0)
    assert not decide(1.001, 1.0)
    got = decide(np.array([0.5, 1.0, 1.5]), 1.0)
    assert got.tolist() == [True, False, False]


def test_pair_distances_weighted_matches_scalar_kernel():
    rng = np.random.default_rng(10)
    X = rng.standard_normal((40, 7))
    w = rng.uniform(0, 1, 7)
    i_idx = rng.integers(0, 40, 25)
    j_idx = rng.integers(0, 40, 25)
    d = pair_distances_weighted(X, w, i_idx, j_idx)
    for n, (i, j) in enumerate(zip(i_idx, j_idx)):
        assert d[n] == pytest.approx(dist_weighted(w, X[i], X[j]), rel=1e-12)


def test_pair_distances_style_matches_scalar_kernel():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((30, 9))
    Y = rng.standard_normal((9, 4))
    S = project_rows(X, Y)
    i_idx = rng.integers(0, 30, 20)
    j_idx = rng.integers(0, 30, 20)
    d = pair_distances_style(S, i_idx, j_idx)
    for n, (i, j) in enumerate(zip(i_idx, j_idx)):
        assert d[n] == dist_lowrank(Y, X[i], X[j])


def test_pair_distances_blocking_is_invisible():
    """Results must not depend on how the pair list is chunked internally."""
    rng = np.random.default_rng(12)
    X = rng.standard_normal((50, 6))
    S = project_rows(X, rng.standard_normal((6, 3)))
    i_idx = rng.integers(0, 50, 10000)
    j_idx = rng.integers(0, 50, 10000)
    whole = pair_distances_style(S, i_idx, j_idx)
    pieces = np.concatenate([
        pair_distances_style(S, i_idx[:777], j_idx[:777]),
        pair_distances_style(S, i_idx[777:], j_idx[777:]),
    ])
    assert np.array_equal(whole, pieces)


def _model(kind, transform, c, **kw):
    return MetricModel(kind=kind, transform=np.asarray(transform, dtype=np.float64),
                       threshold=c, **kw)


class TestModelDistances:
    def test_weighted_kind(self):
        rng = np.random.default_rng(13)
        X = rng.standard_normal((20, 5))
        w = rng.uniform(0, 1, 5)
        m = _model("weighted_nn", w, 1.0)
        d = model_distances(m, X, np.array([0, 1]), np.array([2, 3]))
        assert d[0] == pytest.approx(dist_weighted(w, X[0], X[2]), rel=1e-12)
        assert d[1] == pytest.approx(dist_weighted(w, X[1], X[3]), rel=1e-12)

    def test_low_rank_kind(self):
        rng = np.random.default_rng(14)
        X = rng.standard_normal((20, 5))
        Y = rng.standard_normal((5, 2))
        m = _model("low_rank", Y, 1.0)
        d = model_distances(m, X, np.array([4]), np.array([9]))
        assert d[0] == dist_lowrank(Y, X[4], X[9])

    def test_personalized_kind(self):
        rng = np.random.default_rng(15)
        X = rng.standard_normal((10, 6))
        Y = rng.standard_normal((6, 3))
        W = rng.uniform(0, 2, (2, 3))
        m = _model("personalized", Y, 1.0, user_ids=["u0", "u1"], user_weights=W)
        d = model_distances(m, X, np.array([0, 0]), np.array([1, 1]),
                            user_idx=np.array([0, 1]))
        assert d[0] == pytest.approx(dist_personalized(Y, W[0], X[0], X[1]), rel=1e-12)
        assert d[1] == pytest.approx(dist_personalized(Y, W[1], X[0], X[1]), rel=1e-12)

    def test_personalized_without_users_falls_back_to_shared_metric(self):
        rng = np.random.default_rng(16)
        Y = rng.standard_normal((4, 2))
        m = _model("personalized", Y, 1.0,
                   user_ids=["u0"], user_weights=rng.uniform(0, 2, (1, 2)))
        X = rng.standard_normal((5, 4))
        d = model_distances(m, X, np.array([0]), np.array([1]))
        assert d[0] == dist_lowrank(Y, X[0], X[1])
