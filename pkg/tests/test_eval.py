import numpy as np
import pytest

from depthcomp.models.rasters import DepthMap
from depthcomp.services.metrics import (
    aggregate_metrics,
    compute_metrics,
    error_map,
    format_report,
    report_lines,
    sparsity_sweep,
)
from depthcomp.utils.errors import InvalidInputError, ShapeError

from conftest import smooth_scene


def naive_metrics(pred: np.ndarray, gt: np.ndarray) -> dict:
    """Per-pixel reference loop."""
    sq = ab = rel = isq = iab = 0.0
    hits = [0, 0, 0]
    n = 0
    for p, g in zip(pred.ravel(), gt.ravel()):
        if g <= 0:
            continue
        n += 1
        sq += (p - g) ** 2
        ab += abs(p - g)
        rel += abs(p - g) / g
        isq += (1000.0 / p - 1000.0 / g) ** 2
        iab += abs(1000.0 / p - 1000.0 / g)
        ratio = max(p / g, g / p)
        for k in range(3):
            hits[k] += ratio < 1.25 ** (k + 1)
    return {
        "rmse_mm": np.sqrt(sq / n) * 1000.0,
        "mae_mm": ab / n * 1000.0,
        "rel": rel / n,
        "irmse_per_km": np.sqrt(isq / n),
        "imae_per_km": iab / n,
        "delta1": hits[0] / n,
        "delta2": hits[1] / n,
        "delta3": hits[2] / n,
    }


def random_pair(rng, shape=(20, 30), density=0.5):
    gt = np.where(rng.random(shape) < density, rng.uniform(1.0, 80.0, shape), 0.0)
    pred = rng.uniform(1.0, 80.0, shape)
    return pred, gt


class TestComputeMetrics:
    def test_three_pixel_case(self):
        report = compute_metrics(np.array([2.5, 4.0, 10.0]), np.array([2.0, 4.0, 5.0]))
        assert report.mae_mm == pytest.approx(5500.0 / 3)
        assert report.rmse_mm == pytest.approx(np.sqrt(25.25 / 3) * 1000.0)
        assert report.rmse_mm == pytest.approx(2901.1, abs=0.1)
        assert report.rel == pytest.approx(1.25 / 3)
        assert report.delta1 == pytest.approx(1 / 3)
        assert report.delta2 == pytest.approx(2 / 3)
        assert report.delta3 == pytest.approx(2 / 3)
        assert report.irmse_per_km == pytest.approx(np.sqrt(20000.0 / 3))
        assert report.imae_per_km == pytest.approx(200.0 / 3)
        assert report.n_valid == 3

    def test_exact_prediction(self, scene):
        _, gt = scene
        report = compute_metrics(gt, gt)
        assert report.rmse_mm == report.mae_mm == report.rel == 0.0
        assert report.delta1 == report.delta2 == report.delta3 == 1.0

    def test_constant_offset(self, scene):
        _, gt = scene
        report = compute_metrics(gt.values.astype(np.float64) + 1.0, gt)
        assert report.rmse_mm == pytest.approx(1000.0)
        assert report.mae_mm == pytest.approx(1000.0)

    def test_matches_naive_reference(self, rng):
        for _ in range(20):
            pred, gt = random_pair(rng)
            report = compute_metrics(pred, gt).model_dump()
            for key, expected in naive_metrics(pred, gt).items():
                assert report[key] == pytest.approx(expected, rel=1e-9)

    def test_invariant_to_pred_at_invalid_pixels(self, rng):
        pred, gt = random_pair(rng)
        other = np.where(gt > 0, pred, 77.0)
        assert compute_metrics(pred, gt) == compute_metrics(other, gt)

    def test_scaling(self, rng):
        pred, gt = random_pair(rng)
        a, b = compute_metrics(pred, gt), compute_metrics(pred * 2.5, gt * 2.5)
        assert b.rel == pytest.approx(a.rel)
        assert (b.delta1, b.delta2, b.delta3) == (a.delta1, a.delta2, a.delta3)
        assert b.rmse_mm == pytest.approx(2.5 * a.rmse_mm)
        assert b.mae_mm == pytest.approx(2.5 * a.mae_mm)

    def test_ordering_invariants(self, rng):
        pred, gt = random_pair(rng)
        report = compute_metrics(pred, gt)
        assert report.rmse_mm >= report.mae_mm >= 0
        assert report.delta1 <= report.delta2 <= report.delta3

    def test_depth_range(self):
        gt = np.array([1.0, 10.0, 50.0, 0.0])
        pred = np.array([2.0, 10.0, 60.0, 5.0])
        report = compute_metrics(pred, gt, min_depth=5.0, max_depth=40.0)
        assert report.n_valid == 1
        assert report.rmse_mm == 0.0

    def test_zero_prediction_excluded_from_inverse_metrics(self):
        report = compute_metrics(np.array([0.0, 4.0]), np.array([2.0, 4.0]))
        assert report.irmse_per_km == 0.0
        assert report.delta1 == 0.5

    def test_no_valid_pixels(self):
        with pytest.raises(InvalidInputError):
            compute_metrics(np.ones(4), np.zeros(4))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            compute_metrics(np.ones(4), np.ones(5))


def test_aggregate_equals_pooled_evaluation(rng):
    pairs = [random_pair(rng, density=d) for d in (0.2, 0.5, 0.9)]
    combined = compute_metrics(np.concatenate([p.ravel() for p, _ in pairs]),
                               np.concatenate([g.ravel() for _, g in pairs]))
    aggregated = aggregate_metrics([compute_metrics(p, g) for p, g in pairs])
    assert aggregated.n_valid == combined.n_valid
    for key, value in combined.model_dump().items():
        assert getattr(aggregated, key) == pytest.approx(value, rel=1e-9)


def test_aggregate_weights_inverse_metrics_by_invertible_pixels():
    pairs = [(np.array([0.0, 0.0, 4.0]), np.array([2.0, 2.0, 4.0])),
             (np.array([1.0]), np.array([2.0]))]
    reports = [compute_metrics(p, g) for p, g in pairs]
    assert [r.n_invertible for r in reports] == [1, 1]
    combined = compute_metrics(np.concatenate([p for p, _ in pairs]), np.concatenate([g for _, g in pairs]))
    aggregated = aggregate_metrics(reports)
    assert aggregated.irmse_per_km == pytest.approx(np.sqrt(500.0 ** 2 / 2))
    assert aggregated.imae_per_km == pytest.approx(250.0)
    for key, value in combined.model_dump().items():
        assert getattr(aggregated, key) == pytest.approx(value, rel=1e-9)


def test_aggregate_without_invertible_pixels():
    report = compute_metrics(np.zeros(3), np.array([1.0, 2.0, 3.0]))
    aggregated = aggregate_metrics([report, report])
    assert aggregated.n_invertible == 0
    assert aggregated.irmse_per_km == 0.0 and aggregated.imae_per_km == 0.0


def test_aggregate_nothing():
    with pytest.raises(InvalidInputError):
        aggregate_metrics([])


def test_report_rendering():
    report = compute_metrics(np.array([2.0, 3.0]), np.array([2.0, 3.0]))
    lines = report_lines(report)
    assert "rmse_mm=0" in lines
    assert "n_valid=2" in lines
    table = format_report(report)
    assert "RMSE" in table and "delta<1.25^3" in table


def test_error_map():
    pred = DepthMap(np.array([[3.0, 5.0], [7.0, 2.0]]), 85.0)
    gt = DepthMap(np.array([[1.0, 0.0], [7.0, 4.0]]), 85.0)
    np.testing.assert_array_equal(error_map(pred, gt).values, [[2.0, 0.0], [0.0, 2.0]])


def test_sparsity_sweep_denser_is_better():
    samples = [smooth_scene(32, 48, seed=s) for s in range(2)]

    def passthrough(image, filled):
        return filled

    results = sparsity_sweep(passthrough, samples, counts=[20, 5000], seed=1)
    assert set(results) == {20, 5000}
    assert results[5000].rmse_mm == 0.0
    assert results[20].rmse_mm > results[5000].rmse_mm
    assert results[20].n_valid == 2 * 32 * 48


def test_sparsity_sweep_clamped_counts_share_prediction():
    samples = [smooth_scene(32, 48, seed=s) for s in range(2)]
    calls = []

    def passthrough(image, filled):
        calls.append(filled.valid_count)
        return filled

    results = sparsity_sweep(passthrough, samples, counts=[20, 5000, 9000], seed=1)
    assert len(calls) == 2 * 2
    assert set(results) == {20, 5000, 9000}
    assert results[5000] == results[9000]
