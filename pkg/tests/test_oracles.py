"""Self-checks for the brute-force references."""

import numpy as np
import pytest

from oracles import (
    dp_optimal_clusters,
    enumerate_contiguous_optimum,
    naive_counts,
    naive_rtn,
)


def test_dp_four_points_four_clusters():
    res = dp_optimal_clusters([0, 1, 10, 11], np.ones(4), 4)
    assert res.loss == pytest.approx(0.0, abs=1e-12)


def test_dp_five_points_four_clusters():
    res = dp_optimal_clusters([0, 1, 2, 10, 11], np.ones(5), 4)
    assert res.loss == pytest.approx(0.5, abs=1e-12)


def test_dp_weighted_single_cluster():
    res = dp_optimal_clusters([0.0, 1.0], [3.0, 1.0], 1)
    assert res.centers[0] == pytest.approx(0.25)
    assert res.loss == pytest.approx(0.75)


def test_dp_rejects_k_above_n():
    with pytest.raises(ValueError):
        dp_optimal_clusters([1.0, 2.0], [1.0, 1.0], 3)


def test_dp_matches_exhaustive_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(2, 13))
        k = int(min(rng.integers(1, 5), n))
        values = rng.normal(size=n)
        weights = rng.uniform(0.1, 3.0, size=n)
        dp = dp_optimal_clusters(values, weights, k).loss
        brute = enumerate_contiguous_optimum(values, weights, k)
        assert dp == pytest.approx(brute, abs=1e-9, rel=1e-9)


def test_dp_scale_invariance():
    rng = np.random.default_rng(5)
    values = rng.normal(size=20)
    weights = rng.uniform(0.5, 2.0, size=20)
    base = dp_optimal_clusters(values, weights, 4)
    scaled = dp_optimal_clusters(values, 7.5 * weights, 4)
    assert np.array_equal(base.partition, scaled.partition)
    assert scaled.loss == pytest.approx(7.5 * base.loss, rel=1e-12)


def test_dp_loss_matches_recomputation():
    rng = np.random.default_rng(13)
    values = rng.normal(size=30)
    weights = rng.uniform(0.5, 2.0, size=30)
    res = dp_optimal_clusters(values, weights, 4)
    recomputed = sum(
        w * (v - res.centers[c]) ** 2
        for v, w, c in zip(values, weights, res.partition)
    )
    assert res.loss == pytest.approx(recomputed, abs=1e-12, rel=1e-12)


def test_naive_counts_all_zero():
    assert naive_counts([0] * 8, [0] * 8, [0] * 8) == (0, 0, 0, 0)


def test_naive_counts_all_ones():
    v0, v1, r0, r1 = naive_counts([1] * 128, [1] * 128, [1] * 128)
    assert (v0, v1, r0, r1) == (0, 128, 0, 128)


def test_naive_counts_length_mismatch():
    with pytest.raises(ValueError):
        naive_counts([1], [1, 0], [1])


def test_naive_rtn_reference_case():
    codes, mu, z = naive_rtn([-1.0, 0.0, 2.0], 4)
    assert codes == [0, 5, 15]
    assert mu == pytest.approx(0.2)
    assert z == 5
