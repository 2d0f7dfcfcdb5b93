"""
Dual-branch depth completion network.

RGB branch: strided conv, conv, residual blocks, average-pooling pyramid.
Depth branch: fewer, larger-kernel convolutions and a max-pooling pyramid.
Both run at half resolution. The fusion volume stacks an intermediate
residual output with both pyramids; three convolutions (the first strided)
and a 2x upsample bring it back to half resolution. The decoder restores
full resolution with one transposed convolution, and a 1x1 convolution over
the upsampled decoder taps, a sigmoid and a max-depth scale give the output.
"""
from typing import List, Sequence, Tuple, Union

import numpy as np

from depthcomp.models.rasters import DepthMap, IntensityImage
from depthcomp.models.schemas import NetworkConfig
from depthcomp.nn import functional as F
from depthcomp.nn.layers import BatchNorm2d, Conv2d, ConvTranspose2d, Module
from depthcomp.nn.tensor import Tensor, as_tensor, no_grad
from depthcomp.utils.errors import ConfigurationError, InvalidInputError, ShapeError
from depthcomp.utils.logger import app_logger


class ConvBNReLU(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng, config: NetworkConfig, stride: int = 1):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, kernel, rng, stride=stride, bias=False)
        self.bn = BatchNorm2d(out_ch, config.bn_momentum, config.bn_epsilon)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)))


class ResidualBlock(Module):
    """conv-BN-relu-conv-BN plus identity skip, relu after the sum."""

    def __init__(self, channels: int, rng, config: NetworkConfig):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng, bias=False)
        self.bn1 = BatchNorm2d(channels, config.bn_momentum, config.bn_epsilon)
        self.conv2 = Conv2d(channels, channels, 3, rng, bias=False)
        self.bn2 = BatchNorm2d(channels, config.bn_momentum, config.bn_epsilon)

    def forward(self, x: Tensor) -> Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + x)


def spp_forward(features: Tensor, windows: Sequence[int], pool_kind: str, convs: Sequence[Module]) -> Tensor:
    """
    Spatial pyramid pooling.

    Each scale pools with window = stride, applies its 1x1 convolution and is
    bilinearly upsampled back; the scales are stacked after the input features.

    Raises:
        ConfigurationError: If a window does not divide the feature map
    """
    h, w = features.shape[2:]
    for window in windows:
        if h % window or w % window:
            raise ConfigurationError(
                f"feature map {h}x{w} must be divisible by every pooling window; {window} does not divide it"
            )
    maps = [features]
    for window, conv in zip(windows, convs):
        pooled = F.pool(features, pool_kind, window)
        maps.append(F.upsample_bilinear(conv(pooled), h, w))
    return F.concat_channels(*maps)


class SpatialPyramidPooling(Module):
    def __init__(self, in_ch: int, windows: Sequence[int], per_scale: int, pool_kind: str, rng):
        super().__init__()
        self.windows = tuple(windows)
        self.pool_kind = pool_kind
        for window in self.windows:
            setattr(self, f"scale{window}", Conv2d(in_ch, per_scale, 1, rng))
        self.out_channels = in_ch + len(self.windows) * per_scale

    @property
    def convs(self) -> List[Conv2d]:
        return [getattr(self, f"scale{window}") for window in self.windows]

    def forward(self, features: Tensor) -> Tensor:
        return spp_forward(features, self.windows, self.pool_kind, self.convs)


class RGBBranch(Module):
    def __init__(self, config: NetworkConfig, rng):
        super().__init__()
        c = config.rgb_channels
        self.tap_block = config.fusion_tap_block
        self.conv1 = ConvBNReLU(3, c, 3, rng, config, stride=2)
        self.conv2 = ConvBNReLU(c, c, 3, rng, config)
        self.n_blocks = config.residual_blocks
        for i in range(1, self.n_blocks + 1):
            setattr(self, f"res{i}", ResidualBlock(c, rng, config))
        self.spp = SpatialPyramidPooling(c, config.spp_windows, config.spp_channels, "avg", rng)

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        out = self.conv2(self.conv1(x))
        tap = None
        for i in range(1, self.n_blocks + 1):
            out = getattr(self, f"res{i}")(out)
            if i == self.tap_block:
                tap = out
        return tap, self.spp(out)


class DepthBranch(Module):
    def __init__(self, config: NetworkConfig, rng):
        super().__init__()
        c = config.depth_channels
        self.n_convs = len(config.depth_kernels)
        in_ch = 1
        for i, kernel in enumerate(config.depth_kernels, start=1):
            setattr(self, f"conv{i}", ConvBNReLU(in_ch, c, kernel, rng, config, stride=2 if i == 1 else 1))
            in_ch = c
        self.spp = SpatialPyramidPooling(c, config.spp_windows, config.spp_channels, "max", rng)

    def forward(self, x: Tensor) -> Tensor:
        for i in range(1, self.n_convs + 1):
            x = getattr(self, f"conv{i}")(x)
        return self.spp(x)


class FusionBlock(Module):
    def __init__(self, in_ch: int, config: NetworkConfig, rng):
        super().__init__()
        f1, f2, f3 = config.fusion_channels
        self.conv1 = ConvBNReLU(in_ch, f1, 3, rng, config, stride=2)
        self.conv2 = ConvBNReLU(f1, f2, 3, rng, config)
        self.conv3 = ConvBNReLU(f2, f3, 3, rng, config)

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        out = self.conv3(self.conv2(self.conv1(x)))
        return F.upsample_bilinear(out, h, w)


class UpStage(Module):
    """Transposed convolution doubling the resolution, then BN and relu."""

    def __init__(self, in_ch: int, out_ch: int, rng, config: NetworkConfig):
        super().__init__()
        self.deconv = ConvTranspose2d(in_ch, out_ch, 2, rng, stride=2, bias=False)
        self.bn = BatchNorm2d(out_ch, config.bn_momentum, config.bn_epsilon)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.deconv(x)))


class Decoder(Module):
    """Stage 1 at half resolution, stage 2 upsamples to full, later stages refine."""

    def __init__(self, in_ch: int, config: NetworkConfig, rng):
        super().__init__()
        channels = config.decoder_channels
        self.n_stages = len(channels)
        prev = in_ch
        for i, ch in enumerate(channels, start=1):
            stage = UpStage(prev, ch, rng, config) if i == 2 else ConvBNReLU(prev, ch, 3, rng, config)
            setattr(self, f"stage{i}", stage)
            prev = ch

    def forward(self, x: Tensor) -> List[Tensor]:
        taps = []
        for i in range(1, self.n_stages + 1):
            x = getattr(self, f"stage{i}")(x)
            taps.append(x)
        return taps


class FusionNet(Module):
    """The assembled completion network; call with (rgb, normalised filled depth) NCHW batches."""

    def __init__(self, config: NetworkConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.rgb_branch = RGBBranch(config, rng)
        self.depth_branch = DepthBranch(config, rng)
        fusion_in = (
            config.rgb_channels
            + self.rgb_branch.spp.out_channels
            + self.depth_branch.spp.out_channels
        )
        self.fusion = FusionBlock(fusion_in, config, rng)
        self.decoder = Decoder(config.fusion_channels[-1], config, rng)
        self.head = Conv2d(sum(config.decoder_channels), 1, 1, rng)
        self.last_padding = (0, 0)

    def _pad_amount(self, h: int, w: int) -> Tuple[int, int]:
        m = self.config.input_multiple
        pad_h, pad_w = (-h) % m, (-w) % m
        if (pad_h or pad_w) and not self.config.pad_inputs:
            raise ConfigurationError(
                f"input {h}x{w} must have height and width divisible by {m} "
                f"(twice the largest pooling window {self.config.spp_windows[0]})"
            )
        return pad_h, pad_w

    def forward(self, rgb: Union[Tensor, np.ndarray], depth: Union[Tensor, np.ndarray]) -> Tensor:
        """
        Args:
            rgb: (N, 3, H, W) intensities in [0, 1]
            depth: (N, 1, H, W) filled depth normalised to [0, 1]

        Returns:
            (N, 1, H, W) depth in metres, strictly inside (0, max_depth)
        """
        rgb_data = rgb.data if isinstance(rgb, Tensor) else np.asarray(rgb)
        depth_data = depth.data if isinstance(depth, Tensor) else np.asarray(depth)
        if rgb_data.ndim != 4 or rgb_data.shape[1] != 3:
            raise ShapeError(f"rgb input must be (N, 3, H, W), got {rgb_data.shape}")
        if depth_data.ndim != 4 or depth_data.shape[1] != 1:
            raise ShapeError(f"depth input must be (N, 1, H, W), got {depth_data.shape}")
        if rgb_data.shape[0] != depth_data.shape[0] or rgb_data.shape[2:] != depth_data.shape[2:]:
            raise ShapeError(f"rgb {rgb_data.shape} and depth {depth_data.shape} inputs disagree")
        if depth_data.size and (depth_data.min() < 0 or depth_data.max() > 1):
            raise InvalidInputError("normalised depth input must lie in [0, 1]")

        h, w = rgb_data.shape[2:]
        pad_h, pad_w = self._pad_amount(h, w)
        self.last_padding = (pad_h, pad_w)
        if pad_h or pad_w:
            app_logger.debug(f"Padding input {h}x{w} by ({pad_h}, {pad_w})")
            rgb = Tensor(F.pad_edge(rgb_data, pad_h, pad_w))
            depth = Tensor(F.pad_edge(depth_data, pad_h, pad_w))
        else:
            rgb, depth = as_tensor(rgb), as_tensor(depth)

        tap, rgb_spp = self.rgb_branch(rgb)
        depth_spp = self.depth_branch(depth)
        fused = self.fusion(F.concat_channels(tap, rgb_spp, depth_spp))
        taps = self.decoder(fused)

        full_h, full_w = h + pad_h, w + pad_w
        stack = F.concat_channels(*(F.upsample_bilinear(t, full_h, full_w) for t in taps))
        out = F.sigmoid(self.head(stack)) * float(self.config.max_depth)
        if pad_h or pad_w:
            out = out[:, :, :h, :w]
        return out


def build(config: NetworkConfig, seed: int = 0) -> FusionNet:
    """
    Construct the network with seeded Kaiming fan-in initialisation.

    Conv biases and BN shifts start at zero, BN scales at one; equal seeds
    give bit-identical parameters.
    """
    model = FusionNet(config, np.random.default_rng(seed))
    model.assign_names()
    app_logger.debug(f"Built network: {model.num_parameters()} parameters, seed={seed}")
    return model


def complete_depth(model: FusionNet, image: IntensityImage, filled: DepthMap) -> DepthMap:
    """Single-sample inference: normalise, forward in eval mode without taping, wrap."""
    if (image.height, image.width) != filled.shape:
        raise ShapeError(f"image {image.height}x{image.width} and depth {filled.shape} differ")
    was_training = model.training
    model.eval()
    try:
        rgb = image.chw()[None].astype(np.float32)
        depth = (filled.values / filled.max_depth)[None, None].astype(np.float32)
        with no_grad():
            out = model(rgb, np.clip(depth, 0.0, 1.0))
    finally:
        model.train(was_training)
    return DepthMap(out.data[0, 0], model.config.max_depth)
