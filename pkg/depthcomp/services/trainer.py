"""
Training: ADAM, step learning-rate schedule, sample preparation, the epoch
loop with checkpointing and held-out evaluation.

Runs are deterministic given the seed: data order per epoch comes from a
seeded permutation, preprocessing results are delivered in manifest order
whatever the number of workers, and the RNG state is checkpointed.
"""
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from depthcomp.models.rasters import MISSING, DepthMap, IntensityImage, ValidMask
from depthcomp.models.schemas import (
    DatasetManifest,
    FillParams,
    MetricsReport,
    SampleRecord,
    SgmParams,
    StereoRig,
    TrainConfig,
)
from depthcomp.nn.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from depthcomp.nn.layers import Parameter
from depthcomp.nn.network import FusionNet
from depthcomp.nn.tensor import no_grad
from depthcomp.services.fill import morph_fill, normalize_depth
from depthcomp.services.imageio import read_depth_png16, read_rgb8, split_manifest
from depthcomp.services.loss import LossBreakdown, total_loss
from depthcomp.services.metrics import aggregate_metrics, compute_metrics
from depthcomp.services.stereo import StereoCache
from depthcomp.utils.errors import (
    ConfigurationError,
    DepthCompError,
    InvalidInputError,
    ManifestError,
    ShapeError,
)
from depthcomp.utils.logger import add_train_log_sink, app_logger, log_metrics, log_train_step

StereoSource = Callable[[IntensityImage, IntensityImage], Tuple[DepthMap, ValidMask]]


# -- optimiser ---------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name, and the step counter."""
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    t: int = 0


def _key(param: Parameter, index: int) -> str:
    return param.name or f"param{index}"


def adam_step(
    params: Sequence[Parameter],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    epsilon: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamState:
    """
    One bias-corrected ADAM update with coupled L2 weight decay.

    g <- g + weight_decay * theta
    m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
    theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + epsilon)

    A missing gradient counts as zero.
    """
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for i, (param, grad) in enumerate(zip(params, grads)):
        key = _key(param, i)
        g = np.zeros_like(param.data) if grad is None else np.asarray(grad, dtype=param.dtype)
        if weight_decay:
            g = g + weight_decay * param.data
        m = state.m.setdefault(key, np.zeros_like(param.data))
        v = state.v.setdefault(key, np.zeros_like(param.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + epsilon)
        param.data = (param.data - update).astype(param.dtype)
    return state


def schedule_lr(epoch: int, config: TrainConfig) -> float:
    """Initial rate times decay_factor ** floor(epoch / every)."""
    if epoch < 0:
        raise InvalidInputError(f"epoch must be >= 0, got {epoch}")
    return config.learning_rate * config.lr_decay_factor ** (epoch // config.lr_decay_every_epochs)


# -- samples -----------------------------------------------------------------


@dataclass
class TrainingSample:
    """One preprocessed sample in network layout (C, H, W)."""
    name: str
    rgb: np.ndarray
    depth: np.ndarray
    gt: np.ndarray
    max_depth: float
    stereo: Optional[np.ndarray] = None
    stereo_mask: Optional[np.ndarray] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rgb.shape[1:]

    def image(self) -> IntensityImage:
        return IntensityImage(np.transpose(self.rgb, (1, 2, 0)))

    def ground_truth(self) -> DepthMap:
        return DepthMap(self.gt[0], self.max_depth)


def crop_box(height: int, width: int, crop_h: Optional[int], crop_w: Optional[int]) -> Tuple[slice, slice]:
    """Bottom-centre crop window; the LiDAR returns concentrate in the lower image."""
    crop_h = crop_h or height
    crop_w = crop_w or width
    if crop_h > height or crop_w > width:
        raise InvalidInputError(f"crop {crop_h}x{crop_w} is larger than image {height}x{width}")
    left = (width - crop_w) // 2
    return slice(height - crop_h, height), slice(left, left + crop_w)


def prepare_sample(
    image: IntensityImage,
    sparse: DepthMap,
    gt: Optional[DepthMap],
    fill_params: FillParams,
    stereo: Optional[Tuple[DepthMap, ValidMask]] = None,
    crop: Tuple[Optional[int], Optional[int]] = (None, None),
    name: str = "",
) -> TrainingSample:
    """Fill and normalise the sparse input, then crop every raster to the same window."""
    if (image.height, image.width) != sparse.shape:
        raise ShapeError(f"{name}: image {image.height}x{image.width} and depth {sparse.shape} differ")
    depth = normalize_depth(morph_fill(sparse, fill_params))
    rows, cols = crop_box(sparse.height, sparse.width, *crop)

    gt_values = gt.values if gt is not None else np.zeros(sparse.shape, dtype=np.float32)
    sample = TrainingSample(
        name=name,
        rgb=np.ascontiguousarray(image.chw()[:, rows, cols], dtype=np.float32),
        depth=np.ascontiguousarray(depth[None, rows, cols], dtype=np.float32),
        gt=np.ascontiguousarray(gt_values[None, rows, cols], dtype=np.float32),
        max_depth=sparse.max_depth,
    )
    if stereo is not None:
        stereo_depth, stereo_mask = stereo
        sample.stereo = np.ascontiguousarray(stereo_depth.values[None, rows, cols], dtype=np.float32)
        sample.stereo_mask = np.ascontiguousarray(stereo_mask.values[None, rows, cols])
    return sample


def load_sample(
    record: SampleRecord,
    max_depth: float,
    fill_params: FillParams,
    crop: Tuple[Optional[int], Optional[int]] = (None, None),
    stereo_source: Optional[StereoSource] = None,
    require_gt: bool = True,
) -> TrainingSample:
    """
    Read and preprocess one manifest record.

    Right images are only read when a stereo source is given.

    Raises:
        ManifestError: If ground truth is required but the record has none
        FormatError: If a file cannot be decoded
    """
    if require_gt and record.gt_depth_path is None:
        raise ManifestError(f"record {record.rgb_path} has no ground truth")
    image = read_rgb8(record.rgb_path)
    sparse = read_depth_png16(record.sparse_depth_path, max_depth)
    gt = read_depth_png16(record.gt_depth_path, max_depth) if record.gt_depth_path else None
    stereo = None
    if stereo_source is not None and record.right_rgb_path is not None:
        stereo = stereo_source(image, read_rgb8(record.right_rgb_path))
    return prepare_sample(image, sparse, gt, fill_params, stereo, crop, name=record.rgb_path.name)


def load_samples(records: Sequence[SampleRecord], jobs: int = 1, **kwargs) -> List[TrainingSample]:
    """
    Load records in parallel, keeping manifest order; unreadable records are skipped with a warning.
    """

    def load(record: SampleRecord) -> Optional[TrainingSample]:
        try:
            return load_sample(record, **kwargs)
        except DepthCompError as e:
            app_logger.warning(f"Skipping sample {record.rgb_path}: {e}")
            return None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            loaded = list(pool.map(load, records))
    else:
        loaded = [load(r) for r in records]
    return [s for s in loaded if s is not None]


def stack_batch(batch: Sequence[TrainingSample]):
    """Stack samples into NCHW arrays; samples without stereo contribute an empty mask."""
    shapes = {s.shape for s in batch}
    if len(shapes) != 1:
        raise ShapeError(f"batch mixes image sizes {sorted(shapes)}; set a crop size")
    rgb = np.stack([s.rgb for s in batch])
    depth = np.stack([s.depth for s in batch])
    gt = np.stack([s.gt for s in batch])
    if all(s.stereo is None for s in batch):
        return rgb, depth, gt, None, None
    stereo = np.stack([s.stereo if s.stereo is not None else np.zeros_like(s.gt) for s in batch])
    mask = np.stack([s.stereo_mask if s.stereo_mask is not None else np.zeros(s.gt.shape, bool) for s in batch])
    return rgb, depth, gt, stereo, mask


def predict_sample(model: FusionNet, sample: TrainingSample) -> DepthMap:
    """Eval-mode forward pass on one prepared sample."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            out = model(sample.rgb[None], sample.depth[None])
    finally:
        model.train(was_training)
    return DepthMap(out.data[0, 0], model.config.max_depth)


def evaluate_samples(model: FusionNet, samples: Sequence[TrainingSample]) -> MetricsReport:
    """Valid-pixel-weighted metrics of the model's predictions over samples with ground truth."""
    reports = [
        compute_metrics(predict_sample(model, s), s.gt[0])
        for s in samples
        if (s.gt != MISSING).any()
    ]
    return aggregate_metrics(reports)


# -- loop --------------------------------------------------------------------


class Trainer:
    """
    Owns a model and its optimiser state for the duration of a run.
    """

    def __init__(self, model: FusionNet, config: TrainConfig):
        self.model = model
        self.config = config
        self.state = AdamState()
        self.rng = np.random.default_rng(config.seed)
        self.epoch = 0
        self.step = 0
        self.history: List[LossBreakdown] = []

    @property
    def finished(self) -> bool:
        return self.config.max_steps is not None and self.step >= self.config.max_steps

    def train_step(self, batch: Sequence[TrainingSample], lr: float) -> LossBreakdown:
        rgb, depth, gt, stereo, mask = stack_batch(batch)
        self.model.train()
        self.model.zero_grad()
        pred = self.model(rgb, depth)
        losses = total_loss(
            pred, gt, stereo, mask,
            weights=self.config.weights,
            l1_primary=self.config.l1_primary,
            stereo_exclude_gt=self.config.stereo_exclude_gt,
        )
        losses.total.backward()
        params = self.model.parameters()
        adam_step(
            params, [p.grad for p in params], self.state, lr,
            betas=(self.config.adam_beta1, self.config.adam_beta2),
            epsilon=self.config.adam_epsilon,
            weight_decay=self.config.weight_decay,
        )
        self.step += 1
        self.history.append(losses)
        log_train_step(self.step, self.epoch, lr, losses.components(), losses.total.item())
        return losses

    def run_epoch(self, samples: Sequence[TrainingSample]) -> float:
        """One seeded pass over `samples`; returns the mean total loss."""
        if not samples:
            raise InvalidInputError("empty epoch: no readable training samples")
        lr = schedule_lr(self.epoch, self.config)
        order = self.rng.permutation(len(samples))
        totals = []
        for start in range(0, len(order), self.config.batch_size):
            if self.finished:
                break
            batch = [samples[i] for i in order[start:start + self.config.batch_size]]
            totals.append(self.train_step(batch, lr).total.item())
        self.epoch += 1
        mean = float(np.mean(totals)) if totals else 0.0
        app_logger.info(f"Epoch {self.epoch} done: {len(totals)} steps, mean loss {mean:.6g}, lr {lr:.3g}")
        return mean

    def fit(self, samples: Sequence[TrainingSample], epochs: Optional[int] = None,
            on_epoch_end: Optional[Callable[["Trainer"], None]] = None) -> List[float]:
        """Run epochs until `epochs` total (or config.epochs) or max_steps is reached."""
        target = epochs if epochs is not None else self.config.epochs
        means = []
        while self.epoch < target and not self.finished:
            means.append(self.run_epoch(samples))
            if on_epoch_end is not None:
                on_epoch_end(self)
        return means

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.from_model(
            self.model,
            adam_m=OrderedDict((k, v.copy()) for k, v in self.state.m.items()),
            adam_v=OrderedDict((k, v.copy()) for k, v in self.state.v.items()),
            adam_t=self.state.t,
            epoch=self.epoch,
            step=self.step,
            rng_state=self.rng.bit_generator.state,
        )

    def save(self, path: Path) -> Path:
        return save_checkpoint(self.checkpoint(), path)

    @classmethod
    def resume(cls, model: FusionNet, config: TrainConfig, checkpoint: Checkpoint) -> "Trainer":
        """Continue a run: parameters, moments, counters and RNG state come from the checkpoint."""
        checkpoint.restore(model)
        trainer = cls(model, config)
        trainer.state = AdamState(
            m=OrderedDict((k, v.copy()) for k, v in checkpoint.adam_m.items()),
            v=OrderedDict((k, v.copy()) for k, v in checkpoint.adam_v.items()),
            t=checkpoint.adam_t,
        )
        trainer.epoch = checkpoint.epoch
        trainer.step = checkpoint.step
        if checkpoint.rng_state is not None:
            trainer.rng.bit_generator.state = checkpoint.rng_state
        app_logger.info(f"Resuming at epoch {trainer.epoch}, step {trainer.step}")
        return trainer


@dataclass
class TrainResult:
    checkpoints: List[Path]
    epoch_losses: List[float]
    holdout: List[MetricsReport]
    stereo_runs: int = 0


def train_loop(
    model: FusionNet,
    manifest: DatasetManifest,
    config: TrainConfig,
    fill_params: FillParams = FillParams(),
    sgm_params: SgmParams = SgmParams(),
    rig: Optional[StereoRig] = None,
    cache_dir: Path = Path(".cache/stereo"),
    jobs: int = 1,
    init_from: Optional[Path] = None,
    resume_from: Optional[Path] = None,
    log_path: Optional[Path] = None,
) -> TrainResult:
    """
    Train on a manifest, writing one checkpoint per epoch.

    Stereo targets are produced only when beta > 0; right images are then
    matched once per pair and cached on disk. A held-out split, when
    configured, is evaluated after every epoch.

    Raises:
        ConfigurationError: If stereo supervision is requested without a rig
        InvalidInputError: If no training sample could be loaded
    """
    if model.config.max_depth != manifest.max_depth:
        app_logger.warning(
            f"Network max depth {model.config.max_depth} m differs from dataset max depth {manifest.max_depth} m"
        )

    train_manifest, holdout_manifest = split_manifest(manifest, config.holdout_fraction, config.seed)

    stereo_source, cache = None, None
    wants_stereo = config.weights.beta > 0 and any(r.right_rgb_path for r in train_manifest.records)
    if wants_stereo:
        if rig is None:
            raise ConfigurationError("stereo supervision needs the rig focal length and baseline")
        cache = StereoCache(cache_dir)

        def stereo_source(left, right):
            return cache.get_or_compute(left, right, rig, sgm_params, manifest.max_depth)
    else:
        app_logger.info("Stereo term disabled; right images are not read")

    common = dict(
        max_depth=manifest.max_depth,
        fill_params=fill_params,
        crop=(config.crop_height, config.crop_width),
    )
    samples = load_samples(train_manifest.records, jobs=jobs, stereo_source=stereo_source, **common)
    if not samples:
        raise InvalidInputError("empty epoch: no readable training samples")
    holdout = load_samples(holdout_manifest.records, jobs=jobs, **common) if holdout_manifest else []
    app_logger.info(f"Training on {len(samples)} samples, {len(holdout)} held out")

    if resume_from is not None:
        trainer = Trainer.resume(model, config, load_checkpoint(resume_from))
    else:
        if init_from is not None:
            load_checkpoint(init_from).restore(model)
            app_logger.info(f"Initialised parameters from {init_from}")
        trainer = Trainer(model, config)

    result = TrainResult(checkpoints=[], epoch_losses=[], holdout=[])

    def end_of_epoch(t: Trainer) -> None:
        path = t.save(Path(config.checkpoint_dir) / f"epoch_{t.epoch:03d}.ckpt")
        result.checkpoints.append(path)
        if holdout:
            report = evaluate_samples(t.model, holdout)
            result.holdout.append(report)
            log_metrics(report, prefix=f"holdout epoch={t.epoch}")

    sink = add_train_log_sink(Path(log_path)) if log_path else None
    try:
        result.epoch_losses = trainer.fit(samples, on_epoch_end=end_of_epoch)
    finally:
        if sink is not None:
            app_logger.remove(sink)
    result.stereo_runs = cache.misses if cache else 0
    return result
