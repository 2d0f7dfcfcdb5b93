import math

import numpy as np
import pytest

from depthcomp.models.schemas import FillParams, LossWeights, NetworkConfig, SampleRecord, SgmParams, TrainConfig
from depthcomp.nn.checkpoint import load_checkpoint
from depthcomp.nn.layers import Parameter
from depthcomp.nn.network import build, complete_depth
from depthcomp.nn.tensor import no_grad, precision
from depthcomp.services.imageio import load_manifest
from depthcomp.services.metrics import sparsity_sweep
from depthcomp.services.sample import sparsify
from depthcomp.services.trainer import (
    AdamState,
    Trainer,
    adam_step,
    crop_box,
    evaluate_samples,
    load_samples,
    prepare_sample,
    schedule_lr,
    stack_batch,
    train_loop,
)
from depthcomp.utils.errors import ConfigurationError, InvalidInputError, ShapeError

from conftest import MAX_DEPTH, smooth_scene


def scalar_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float reference trajectory."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(theta)
    return out


def run_config(tmp_path, **overrides) -> TrainConfig:
    fields = dict(
        epochs=1,
        batch_size=2,
        seed=7,
        weights=LossWeights(beta=0.0),
        checkpoint_dir=tmp_path,
    )
    fields.update(overrides)
    return TrainConfig(**fields)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        param = Parameter(np.zeros(4), name="w")
        adam_step([param], [np.full(4, 0.3)], AdamState(), lr=0.01)
        np.testing.assert_allclose(param.data, -0.01, rtol=1e-5)

    def test_zero_gradient_is_a_no_op(self):
        param = Parameter(np.arange(3.0), name="w")
        adam_step([param], [np.zeros(3)], AdamState(), lr=0.1)
        np.testing.assert_array_equal(param.data, [0.0, 1.0, 2.0])

    def test_missing_gradient_counts_as_zero(self):
        param = Parameter(np.ones(2), name="w")
        state = adam_step([param], [None], AdamState(), lr=0.1)
        np.testing.assert_array_equal(param.data, [1.0, 1.0])
        assert state.t == 1

    def test_matches_scalar_reference(self):
        with precision(np.float64):
            param = Parameter(np.array([0.5]), name="w")
        state = AdamState()
        got = []
        for _ in range(3):
            adam_step([param], [np.ones(1)], state, lr=0.1)
            got.append(float(param.data[0]))
        for a, b in zip(got, scalar_adam(0.5, [1.0, 1.0, 1.0], 0.1)):
            assert abs(a - b) < 1e-12

    def test_moments_keyed_by_name(self):
        a, b = Parameter(np.ones(2), name="a"), Parameter(np.ones(3), name="b")
        state = adam_step([a, b], [np.ones(2), np.ones(3)], AdamState(), lr=0.1)
        assert list(state.m) == ["a", "b"]
        assert state.v["b"].shape == (3,)

    def test_weight_decay_shrinks_norm(self):
        with precision(np.float64):
            param = Parameter(np.array([1.0, -2.0, 0.5]), name="w")
        state = AdamState()
        norms = [np.linalg.norm(param.data)]
        for _ in range(5):
            adam_step([param], [np.zeros(3)], state, lr=0.01, weight_decay=1e-4)
            norms.append(np.linalg.norm(param.data))
        assert all(b < a for a, b in zip(norms, norms[1:]))


class TestSchedule:
    def test_values(self):
        config = TrainConfig()
        assert schedule_lr(0, config) == pytest.approx(1e-4)
        assert schedule_lr(4, config) == pytest.approx(1e-4)
        assert schedule_lr(5, config) == pytest.approx(9e-5)

    def test_non_increasing(self):
        config = TrainConfig(lr_decay_factor=0.5, lr_decay_every_epochs=2)
        rates = [schedule_lr(e, config) for e in range(20)]
        assert all(b <= a for a, b in zip(rates, rates[1:]))

    def test_negative_epoch(self):
        with pytest.raises(InvalidInputError):
            schedule_lr(-1, TrainConfig())


class TestSamples:
    def test_crop_is_bottom_centre(self):
        rows, cols = crop_box(10, 20, 4, 8)
        assert (rows.start, rows.stop, cols.start, cols.stop) == (6, 10, 6, 14)

    def test_crop_larger_than_image(self):
        with pytest.raises(InvalidInputError):
            crop_box(10, 20, 12, 8)

    def test_unreadable_records_skipped(self, dataset, tmp_path):
        manifest = load_manifest(dataset)
        broken = SampleRecord(rgb_path=tmp_path / "gone.png", sparse_depth_path=tmp_path / "gone_s.png",
                              gt_depth_path=tmp_path / "gone_gt.png")
        records = list(manifest.records) + [broken]
        samples = load_samples(records, jobs=2, max_depth=manifest.max_depth, fill_params=FillParams())
        assert [s.name for s in samples] == [r.rgb_path.name for r in manifest.records]

    def test_samples_are_filled_and_cropped(self, dataset):
        manifest = load_manifest(dataset)
        (sample,) = load_samples(manifest.records[:1], max_depth=manifest.max_depth,
                                 fill_params=FillParams(), crop=(32, 48))
        assert sample.rgb.shape == (3, 32, 48)
        assert sample.depth.shape == sample.gt.shape == (1, 32, 48)
        assert (sample.depth > 0).all() and (sample.depth <= 1).all()

    def test_mixed_sizes_do_not_stack(self, dataset):
        manifest = load_manifest(dataset)
        kwargs = dict(max_depth=manifest.max_depth, fill_params=FillParams())
        (a,) = load_samples(manifest.records[:1], crop=(32, 32), **kwargs)
        (b,) = load_samples(manifest.records[1:2], **kwargs)
        with pytest.raises(ShapeError):
            stack_batch([a, b])


class TestTrainLoop:
    def test_same_seed_gives_identical_checkpoints(self, dataset, tiny_config, tmp_path):
        manifest = load_manifest(dataset)
        for run in ("a", "b"):
            train_loop(build(tiny_config, seed=1), manifest, run_config(tmp_path / run))
        first = (tmp_path / "a" / "epoch_001.ckpt").read_bytes()
        assert first == (tmp_path / "b" / "epoch_001.ckpt").read_bytes()

    def test_resume_matches_uninterrupted_run(self, dataset, tiny_config, tmp_path):
        manifest = load_manifest(dataset)
        train_loop(build(tiny_config, seed=1), manifest, run_config(tmp_path / "full", epochs=2))

        train_loop(build(tiny_config, seed=1), manifest, run_config(tmp_path / "split", epochs=1))
        resumed = train_loop(
            build(tiny_config, seed=42), manifest, run_config(tmp_path / "split", epochs=2),
            resume_from=tmp_path / "split" / "epoch_001.ckpt",
        )
        assert [p.name for p in resumed.checkpoints] == ["epoch_002.ckpt"]
        full = (tmp_path / "full" / "epoch_002.ckpt").read_bytes()
        assert full == (tmp_path / "split" / "epoch_002.ckpt").read_bytes()

    def test_checkpoint_carries_optimiser_state(self, dataset, tiny_config, tmp_path):
        manifest = load_manifest(dataset)
        train_loop(build(tiny_config), manifest, run_config(tmp_path))
        ckpt = load_checkpoint(tmp_path / "epoch_001.ckpt")
        assert (ckpt.epoch, ckpt.step, ckpt.adam_t) == (1, 2, 2)
        assert set(ckpt.adam_m) == {name for name, _ in build(tiny_config).named_parameters()}
        assert ckpt.rng_state is not None

    def test_stereo_disabled_never_matches(self, dataset, tiny_config, rig, tmp_path):
        manifest = load_manifest(dataset)
        records = [r.model_copy(update={"right_rgb_path": r.rgb_path}) for r in manifest.records]
        manifest = manifest.model_copy(update={"records": records})
        cache_dir = tmp_path / "cache"
        result = train_loop(build(tiny_config), manifest, run_config(tmp_path / "ck"), rig=rig, cache_dir=cache_dir)
        assert result.stereo_runs == 0
        assert not cache_dir.exists()

    def test_stereo_targets_matched_once_per_pair(self, dataset, tiny_config, rig, tmp_path):
        manifest = load_manifest(dataset)
        records = [r.model_copy(update={"right_rgb_path": r.rgb_path}) for r in manifest.records]
        manifest = manifest.model_copy(update={"records": records})
        config = run_config(tmp_path / "ck", epochs=2, weights=LossWeights(beta=0.01))
        result = train_loop(build(tiny_config), manifest, config, sgm_params=SgmParams(max_disparity=8),
                            rig=rig, cache_dir=tmp_path / "cache")
        assert result.stereo_runs == 4

    def test_stereo_without_rig(self, dataset, tiny_config, tmp_path):
        manifest = load_manifest(dataset)
        records = [r.model_copy(update={"right_rgb_path": r.rgb_path}) for r in manifest.records]
        manifest = manifest.model_copy(update={"records": records})
        with pytest.raises(ConfigurationError):
            train_loop(build(tiny_config), manifest, run_config(tmp_path, weights=LossWeights(beta=0.01)))

    def test_no_readable_samples(self, tiny_config, tmp_path, dataset):
        manifest = load_manifest(dataset)
        broken = [SampleRecord(rgb_path=tmp_path / f"x{i}.png", sparse_depth_path=tmp_path / f"s{i}.png",
                               gt_depth_path=tmp_path / f"g{i}.png") for i in range(2)]
        manifest = manifest.model_copy(update={"records": broken})
        with pytest.raises(InvalidInputError, match="empty epoch"):
            train_loop(build(tiny_config), manifest, run_config(tmp_path))

    def test_empty_epoch(self, tiny_config):
        with pytest.raises(InvalidInputError):
            Trainer(build(tiny_config), TrainConfig()).run_epoch([])

    def test_max_steps_stops_early(self, dataset, tiny_config, tmp_path):
        manifest = load_manifest(dataset)
        result = train_loop(build(tiny_config), manifest, run_config(tmp_path, epochs=3, max_steps=3))
        assert len(result.checkpoints) == 2
        assert load_checkpoint(result.checkpoints[-1]).step == 3

    def test_holdout_and_step_log(self, dataset, tiny_config, tmp_path):
        manifest = load_manifest(dataset)
        log = tmp_path / "train.log"
        result = train_loop(build(tiny_config), manifest, run_config(tmp_path / "ck", holdout_fraction=0.25),
                            log_path=log)
        assert len(result.holdout) == 1
        assert result.holdout[0].n_valid == 64 * 64
        lines = log.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("step=1 epoch=0 lr=0.0001 primary=")
        assert "total=" in lines[0]


@pytest.mark.slow
def test_overfits_fixed_samples(dataset, tiny_config):
    manifest = load_manifest(dataset)
    samples = load_samples(manifest.records, max_depth=manifest.max_depth, fill_params=FillParams())
    config = TrainConfig(learning_rate=1e-3, weight_decay=0.0, batch_size=4, epochs=200,
                         weights=LossWeights(beta=0.0, gamma=0.0), seed=0)
    trainer = Trainer(build(tiny_config, seed=0), config)
    trainer.fit(samples)

    primary = [b.primary for b in trainer.history]
    assert len(primary) == 200
    assert primary[-1] < 0.1 * primary[0]
    windows = [np.mean(primary[i:i + 10]) for i in range(0, 50, 10)]
    assert all(b < a for a, b in zip(windows, windows[1:]))

    before = evaluate_samples(build(tiny_config, seed=0), samples)
    after = evaluate_samples(trainer.model, samples)
    assert after.rmse_mm < before.rmse_mm


@pytest.fixture(scope="module")
def wide_run():
    """500 steps on four 64x256 scenes; shared by the desk-scale checks below."""
    scenes = [smooth_scene(64, 256, seed=20 + i) for i in range(4)]
    samples = [
        prepare_sample(image, sparsify(gt, n=1000, seed=i), gt, FillParams(), name=f"wide_{i}")
        for i, (image, gt) in enumerate(scenes)
    ]
    config = TrainConfig(learning_rate=1e-3, weight_decay=0.0, batch_size=4, epochs=500,
                         weights=LossWeights(beta=0.0, gamma=0.0), seed=0)
    network = NetworkConfig.tiny(max_depth=MAX_DEPTH)
    before = evaluate_samples(build(network, seed=0), samples)
    trainer = Trainer(build(network, seed=0), config)
    trainer.fit(samples)
    return trainer.model, scenes, samples, before


@pytest.mark.slow
def test_wide_overfit_reaches_target(wide_run):
    model, _, samples, before = wide_run
    after = evaluate_samples(model, samples)
    assert after.rmse_mm < 0.05 * model.config.max_depth * 1000.0
    assert after.rmse_mm < 0.1 * before.rmse_mm


@pytest.mark.slow
def test_wide_overfit_uses_both_branches(wide_run):
    model, _, samples, _ = wide_run
    model.eval()
    rgb = np.stack([s.rgb for s in samples])
    depth = np.stack([s.depth for s in samples])
    with no_grad():
        base = model(rgb, depth).data
        no_rgb = model(np.zeros_like(rgb), depth).data
        no_depth = model(rgb, np.zeros_like(depth)).data
    model.train()
    threshold = 0.01 * model.config.max_depth
    assert np.abs(base - no_rgb).mean() > threshold
    assert np.abs(base - no_depth).mean() > threshold


@pytest.mark.slow
def test_wide_sparsity_trend_saturates(wide_run):
    model, scenes, _, _ = wide_run
    results = sparsity_sweep(lambda image, filled: complete_depth(model, image, filled),
                             scenes, counts=[100, 1000, 2000], seed=3)
    rmse = {count: report.rmse_mm for count, report in results.items()}
    assert rmse[1000] <= rmse[100]
    assert rmse[1000] - rmse[2000] < rmse[100] - rmse[1000]
