import numpy as np
import pytest

from depthcomp.models.rasters import DepthMap
from depthcomp.models.schemas import NetworkConfig
from depthcomp.nn.checkpoint import MAGIC, Checkpoint, load_checkpoint, save_checkpoint
from depthcomp.nn.gradcheck import gradcheck_parameters
from depthcomp.nn.layers import Conv2d
from depthcomp.nn.network import build, complete_depth, spp_forward
from depthcomp.nn.tensor import Tensor, no_grad, precision
from depthcomp.utils.errors import (
    ConfigurationError,
    FormatError,
    IncompatibleCheckpointError,
    InvalidInputError,
    ShapeError,
)

from conftest import MAX_DEPTH, smooth_scene


def expected_parameters(config: NetworkConfig) -> int:
    """Parameter count summed over the layer inventory."""

    def conv_bn(cin, cout, k):
        return cin * cout * k * k + 2 * cout

    def spp(cin):
        return len(config.spp_windows) * (cin * config.spp_channels + config.spp_channels)

    c, d = config.rgb_channels, config.depth_channels
    rgb = conv_bn(3, c, 3) + conv_bn(c, c, 3) + config.residual_blocks * 2 * conv_bn(c, c, 3) + spp(c)

    depth, cin = 0, 1
    for k in config.depth_kernels:
        depth += conv_bn(cin, d, k)
        cin = d
    depth += spp(d)

    per_pyramid = len(config.spp_windows) * config.spp_channels
    f1, f2, f3 = config.fusion_channels
    fusion_in = c + (c + per_pyramid) + (d + per_pyramid)
    fusion = conv_bn(fusion_in, f1, 3) + conv_bn(f1, f2, 3) + conv_bn(f2, f3, 3)

    decoder, cin = 0, f3
    for i, ch in enumerate(config.decoder_channels, start=1):
        decoder += conv_bn(cin, ch, 2) if i == 2 else conv_bn(cin, ch, 3)
        cin = ch
    head = sum(config.decoder_channels) + 1
    return rgb + depth + fusion + decoder + head


def random_inputs(rng, n=1, h=64, w=64):
    rgb = rng.random((n, 3, h, w)).astype(np.float32)
    depth = rng.uniform(0.05, 1.0, size=(n, 1, h, w)).astype(np.float32)
    return rgb, depth


@pytest.fixture
def model(tiny_config):
    return build(tiny_config, seed=0)


class TestBuild:
    def test_output_shape(self, model, rng):
        assert model(*random_inputs(rng)).shape == (1, 1, 64, 64)

    def test_equal_seeds_give_identical_parameters(self, tiny_config):
        a, b = build(tiny_config, seed=5), build(tiny_config, seed=5)
        for (name_a, pa), (name_b, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert name_a == name_b
            np.testing.assert_array_equal(pa.data, pb.data)
        c = build(tiny_config, seed=6)
        assert not np.array_equal(a.head.weight.data, c.head.weight.data)

    @pytest.mark.parametrize("factory", [NetworkConfig.tiny, NetworkConfig.default])
    def test_parameter_count_matches_inventory(self, factory):
        config = factory(max_depth=MAX_DEPTH)
        assert build(config).num_parameters() == expected_parameters(config)

    def test_tiny_parameter_count(self, model):
        assert model.num_parameters() == 27465

    def test_parameter_names_are_unique_paths(self, model):
        names = [name for name, _ in model.named_parameters()]
        assert len(names) == len(set(names))
        assert "rgb_branch.res1.conv1.weight" in names
        assert all(p.name == name for name, p in model.named_parameters())

    def test_initialisation(self, model):
        assert not model.head.bias.data.any()
        assert (model.rgb_branch.conv1.bn.gamma.data == 1.0).all()
        assert not model.rgb_branch.conv1.bn.beta.data.any()

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            NetworkConfig(spp_windows=(8, 16))
        with pytest.raises(ValueError):
            NetworkConfig(residual_blocks=1, fusion_tap_block=2)


class TestForward:
    def test_output_strictly_inside_range(self, model, rng):
        out = model(*random_inputs(rng, n=2)).data
        assert (out > 0).all() and (out < MAX_DEPTH).all()

    def test_both_branches_contribute(self, model, rng):
        model.eval()
        rgb, depth = random_inputs(rng)
        with no_grad():
            base = model(rgb, depth).data
            no_rgb = model(np.zeros_like(rgb), depth).data
            no_depth = model(rgb, np.zeros_like(depth)).data
        assert np.linalg.norm(base - no_rgb) > 0
        assert np.linalg.norm(base - no_depth) > 0

    def test_eval_is_deterministic(self, model, rng):
        model.eval()
        rgb, depth = random_inputs(rng)
        np.testing.assert_array_equal(model(rgb, depth).data, model(rgb, depth).data)

    def test_max_depth_only_scales(self, tiny_config, rng):
        doubled = tiny_config.model_copy(update={"max_depth": 2 * MAX_DEPTH})
        a, b = build(tiny_config, seed=3).eval(), build(doubled, seed=3).eval()
        rgb, depth = random_inputs(rng)
        np.testing.assert_array_equal(b(rgb, depth).data, 2 * a(rgb, depth).data)

    def test_inputs_padded_and_cropped(self, model, rng):
        out = model(*random_inputs(rng, h=40, w=50))
        assert out.shape == (1, 1, 40, 50)
        assert model.last_padding == (24, 14)

    def test_padding_disabled(self, tiny_config, rng):
        model = build(tiny_config.model_copy(update={"pad_inputs": False}))
        with pytest.raises(ConfigurationError, match="divisible by 32"):
            model(*random_inputs(rng, h=40, w=64))

    def test_shape_errors(self, model, rng):
        rgb, depth = random_inputs(rng)
        with pytest.raises(ShapeError):
            model(rgb[:, :1], depth)
        with pytest.raises(ShapeError):
            model(rgb, depth[:, :, :32])

    def test_depth_outside_unit_range(self, model, rng):
        rgb, depth = random_inputs(rng)
        with pytest.raises(InvalidInputError):
            model(rgb, depth * 2.0)

    def test_every_parameter_receives_gradient(self, model, rng):
        rgb, depth = random_inputs(rng, n=2)
        weights = Tensor(rng.standard_normal((2, 1, 64, 64)))
        (model(rgb, depth) * weights).sum().backward()
        for name, param in model.named_parameters():
            assert param.grad is not None and np.abs(param.grad).max() > 0, name

    def test_parameter_gradcheck(self, tiny_config, rng):
        model = build(tiny_config, seed=1).astype(np.float64)
        rgb, depth = random_inputs(rng, n=2, h=32, w=32)
        weights = rng.standard_normal((2, 1, 32, 32))

        def loss():
            return (model(rgb.astype(np.float64), depth.astype(np.float64)) * Tensor(weights)).sum() / 1000.0

        result = gradcheck_parameters(loss, model, per_parameter=5, rng=rng)
        assert result.passed, result.max_error


class TestPyramid:
    def test_pooled_grid_sizes(self):
        seen = []

        def record(pooled):
            seen.append(pooled.shape[2:])
            return pooled

        features = Tensor(np.zeros((1, 1, 64, 256)))
        out = spp_forward(features, [64, 32, 16, 8], "avg", [record] * 4)
        assert seen == [(1, 4), (2, 8), (4, 16), (8, 32)]
        assert out.shape == (1, 5, 64, 256)

    @pytest.mark.parametrize("kind", ["avg", "max"])
    def test_constant_features(self, kind):
        features = Tensor(np.full((1, 2, 16, 16), 1.5))
        out = spp_forward(features, [8, 4], kind, [lambda t: t, lambda t: t])
        np.testing.assert_allclose(out.data, 1.5)

    def test_unit_window_duplicates_input(self, rng):
        features = Tensor(rng.standard_normal((1, 3, 4, 4)))
        conv = Conv2d(3, 3, 1, rng)
        conv.weight.data = np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1)
        out = spp_forward(features, [1], "max", [conv])
        np.testing.assert_array_equal(out.data, np.concatenate([features.data, features.data], axis=1))

    def test_window_must_divide(self):
        with pytest.raises(ConfigurationError, match="divisible"):
            spp_forward(Tensor(np.zeros((1, 1, 12, 16))), [8], "avg", [lambda t: t])


def test_complete_depth_restores_mode(model):
    image, gt = smooth_scene(64, 64, seed=2)
    out = complete_depth(model, image, gt)
    assert isinstance(out, DepthMap)
    assert out.shape == (64, 64)
    assert model.training


class TestCheckpoint:
    def test_save_load_save_is_byte_identical(self, model, rng, tmp_path):
        model(*random_inputs(rng))
        first = save_checkpoint(Checkpoint.from_model(model, epoch=2, step=10), tmp_path / "a.ckpt")
        loaded = load_checkpoint(first)
        second = save_checkpoint(loaded, tmp_path / "b.ckpt")
        assert first.read_bytes() == second.read_bytes()
        assert (loaded.epoch, loaded.step) == (2, 10)

    def test_restore_reproduces_outputs(self, tiny_config, rng, tmp_path):
        trained = build(tiny_config, seed=0)
        trained(*random_inputs(rng))
        path = save_checkpoint(Checkpoint.from_model(trained), tmp_path / "m.ckpt")
        fresh = build(tiny_config, seed=9)
        load_checkpoint(path).restore(fresh)
        trained.eval()
        fresh.eval()
        rgb, depth = random_inputs(rng)
        np.testing.assert_array_equal(trained(rgb, depth).data, fresh(rgb, depth).data)

    def test_mismatched_network_names_field(self, model, tiny_config, tmp_path):
        path = save_checkpoint(Checkpoint.from_model(model), tmp_path / "m.ckpt")
        wider = build(tiny_config.model_copy(update={"rgb_channels": 16}))
        with pytest.raises(IncompatibleCheckpointError, match="rgb_channels"):
            load_checkpoint(path).restore(wider)

    def test_same_shapes_other_fusion_tap(self, model, tiny_config, tmp_path):
        path = save_checkpoint(Checkpoint.from_model(model), tmp_path / "m.ckpt")
        other = build(tiny_config.model_copy(update={"fusion_tap_block": 4}))
        assert other.num_parameters() == model.num_parameters()
        before = other.head.weight.data.copy()
        with pytest.raises(IncompatibleCheckpointError, match="fusion_tap_block"):
            load_checkpoint(path).restore(other)
        np.testing.assert_array_equal(other.head.weight.data, before)

    def test_mismatched_shape_names_parameter(self, model):
        ckpt = Checkpoint.from_model(model)
        ckpt.state["rgb_branch.conv1.conv.weight"] = np.zeros((1, 1, 1, 1), dtype=np.float32)
        with pytest.raises(IncompatibleCheckpointError, match="rgb_branch.conv1.conv.weight"):
            ckpt.restore(model)

    def test_warm_start_may_change_max_depth(self, model, tiny_config, rng, tmp_path):
        path = save_checkpoint(Checkpoint.from_model(model), tmp_path / "m.ckpt")
        rescaled = build(tiny_config.model_copy(update={"max_depth": 2 * MAX_DEPTH}), seed=9)
        load_checkpoint(path).restore(rescaled)
        model.eval()
        rescaled.eval()
        rgb, depth = random_inputs(rng)
        np.testing.assert_array_equal(rescaled(rgb, depth).data, 2 * model(rgb, depth).data)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"PK\x03\x04 something else")
        with pytest.raises(IncompatibleCheckpointError):
            load_checkpoint(path)

    def test_other_format_version(self, model, tmp_path):
        path = save_checkpoint(Checkpoint.from_model(model), tmp_path / "m.ckpt")
        raw = bytearray(path.read_bytes())
        raw[len(MAGIC):len(MAGIC) + 2] = (99).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(IncompatibleCheckpointError, match="version 99"):
            load_checkpoint(path)

    def test_truncated(self, model, tmp_path):
        path = save_checkpoint(Checkpoint.from_model(model), tmp_path / "m.ckpt")
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "none.ckpt")

    def test_float64_round_trip(self, model, tmp_path):
        with precision(np.float64):
            model.astype(np.float64)
        path = save_checkpoint(Checkpoint.from_model(model), tmp_path / "m.ckpt")
        state = load_checkpoint(path).state
        assert all(a.dtype == np.float64 for a in state.values())
