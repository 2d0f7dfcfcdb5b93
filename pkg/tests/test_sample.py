import numpy as np
import pytest

from depthcomp.models.rasters import DepthMap
from depthcomp.services.sample import resolve_count, sparsify, sparsity_levels, split_points
from depthcomp.utils.errors import InvalidInputError


@pytest.fixture
def dense(rng):
    return DepthMap(rng.uniform(1.0, 80.0, size=(100, 100)), 85.0)


def test_zero_samples_is_empty(dense):
    assert sparsify(dense, n=0).valid_count == 0


def test_full_fraction_is_identity(dense):
    np.testing.assert_array_equal(sparsify(dense, fraction=1.0, seed=3).values, dense.values)


def test_ten_percent_is_exact(dense):
    assert sparsify(dense, fraction=0.10, seed=1).valid_count == 1000


def test_deterministic_per_seed(dense):
    a = sparsify(dense, n=500, seed=7)
    b = sparsify(dense, n=500, seed=7)
    c = sparsify(dense, n=500, seed=8)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_subset_with_exact_values(rng):
    values = np.where(rng.random((30, 30)) < 0.3, rng.uniform(1, 80, (30, 30)), 0.0)
    source = DepthMap(values, 85.0)
    kept = sparsify(source, n=50, seed=2)
    picked = kept.values != 0
    assert kept.valid_count == 50
    assert (source.values[picked] != 0).all()
    np.testing.assert_array_equal(kept.values[picked], source.values[picked])


def test_too_many_samples(dense):
    with pytest.raises(InvalidInputError):
        sparsify(dense, n=10001)


@pytest.mark.parametrize("kwargs", [{}, {"n": 3, "fraction": 0.1}, {"fraction": 1.5}, {"n": -1}])
def test_malformed_request(kwargs):
    with pytest.raises(InvalidInputError):
        resolve_count(100, **kwargs)


def test_fraction_rounds_half_up():
    assert resolve_count(15, fraction=0.1) == 2
    assert resolve_count(14, fraction=0.1) == 1


def test_selection_frequency_is_uniform():
    dense = DepthMap(np.full((10, 10), 5.0), 85.0)
    f, seeds = 0.1, 1000
    hits = np.zeros((10, 10))
    for seed in range(seeds):
        hits += sparsify(dense, fraction=f, seed=seed).values != 0
    sigma = np.sqrt(seeds * f * (1 - f))
    assert np.abs(hits - seeds * f).max() < 5 * sigma


def test_split_points_partitions_valid_set(dense):
    kept, withheld = split_points(dense, n=300, seed=5)
    np.testing.assert_array_equal(kept.values, sparsify(dense, n=300, seed=5).values)
    assert kept.valid_count + withheld.valid_count == dense.valid_count
    assert not ((kept.values != 0) & (withheld.values != 0)).any()
    np.testing.assert_array_equal(kept.values + withheld.values, dense.values)


def test_sparsity_levels_clamp_and_dedupe():
    assert sparsity_levels(150, [100, 1000, 2000]) == [100, 150]
