"""Training: Adam, polynomial learning-rate decay, augmentation, and the
epoch loop.

Determinism contract: given one TrainConfig.seed, the whole trajectory is
reproducible bitwise on one machine. Every random decision draws from a
generator derived from (seed, epoch, sample index), so neither dataset
order nor batch grouping perturbs the streams.

Flips are vertical only: mirroring a rectified pair horizontally reverses
the left/right matching geometry, which plain label flipping would break.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import loss as LO
from . import model as MO
from . import tensor as T
from .loss import LabeledSample, LossConfig
from .model import ModelConfig, StereoPair, WeightSet
from .tensor import Tensor


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    epochs: int = 100
    poly_power: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    crop_h: int = 64
    crop_w: int = 64
    seed: int = 0
    flip: bool = False
    color_jitter: bool = False
    noise: bool = False
    blur: bool = False

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be > 0")
        if self.poly_power < 0:
            raise ValueError("poly_power must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.crop_h < 1 or self.crop_w < 1:
            raise ValueError("crop dims must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    lr: float
    l_hr: float
    l_lr: float
    l_nsce: float
    l_smooth: float
    total: float
    wall_seconds: float

    def log_line(self) -> str:
        return (f"{self.epoch}\t{self.lr:.8g}\t{self.l_hr:.6g}\t{self.l_lr:.6g}"
                f"\t{self.l_nsce:.6g}\t{self.l_smooth:.6g}\t{self.total:.6g}"
                f"\t{self.wall_seconds:.3f}")


def poly_lr(t: int, total: int, lr0: float, power: float = 0.9) -> float:
    """lr0 * (1 - t/total)^power, nonincreasing in t."""
    if total < 1:
        raise ValueError("total must be >= 1")
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return lr0 * (1.0 - t / total) ** power


class OptimizerState:
    """Adam first/second moments mirroring a WeightSet, plus a step count."""

    def __init__(self, weights: WeightSet):
        self.m = {name: np.zeros_like(t.data) for name, t in weights.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in weights.items()}
        self.t = 0


def adam_step(weights: WeightSet, state: OptimizerState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place. Every weight must carry a
    gradient; a missing one is an error naming the weight."""
    for name, t in weights.items():
        if t.grad is None:
            raise ValueError(f"missing gradient for weight {name!r}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, t in weights.items():
        g = t.grad
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    if radius < 1:
        return img
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    kernel = (kernel / kernel.sum()).astype(img.dtype)
    out = np.pad(img, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    out = sum(kernel[i] * out[:, i:i + img.shape[1], :] for i in range(kernel.size))
    out = np.pad(out, ((0, 0), (0, 0), (radius, radius)), mode="reflect")
    return sum(kernel[i] * out[:, :, i:i + img.shape[2]] for i in range(kernel.size))


@dataclass(frozen=True)
class AugmentFlags:
    flip: bool = False
    color_jitter: bool = False
    noise: bool = False
    blur: bool = False

    @staticmethod
    def from_config(cfg: TrainConfig) -> "AugmentFlags":
        return AugmentFlags(flip=cfg.flip, color_jitter=cfg.color_jitter,
                            noise=cfg.noise, blur=cfg.blur)


def augment(sample: LabeledSample, flags: AugmentFlags,
            rng: np.random.Generator) -> LabeledSample:
    """Vertical flip plus photometric jitter/blur/noise.

    Photometric ops touch only the images; ground truth and validity are
    returned bitwise unchanged (and flipped consistently under flips).
    """
    left = sample.pair.left.data.copy()
    right = sample.pair.right.data.copy()
    gt = sample.gt_disparity
    valid = sample.valid_mask

    if flags.flip and rng.random() < 0.5:
        left = left[:, ::-1, :].copy()
        right = right[:, ::-1, :].copy()
        gt = gt[::-1, :].copy()
        valid = valid[::-1, :].copy()

    if flags.color_jitter:
        gain = rng.uniform(0.8, 1.25, 3).astype(left.dtype)[:, None, None]
        offset = rng.uniform(-0.05, 0.05, 3).astype(left.dtype)[:, None, None]
        left = np.clip(left * gain + offset, 0.0, 1.0)
        right = np.clip(right * gain + offset, 0.0, 1.0)

    if flags.blur:
        sigma = rng.uniform(0.0, 1.0)
        left = _gaussian_blur(left, sigma)
        right = _gaussian_blur(right, sigma)

    if flags.noise:
        sigma = rng.uniform(0.0, 0.02)
        left = np.clip(left + rng.normal(0.0, sigma, left.shape).astype(left.dtype), 0, 1)
        right = np.clip(right + rng.normal(0.0, sigma, right.shape).astype(right.dtype), 0, 1)

    return LabeledSample(pair=StereoPair(Tensor(np.ascontiguousarray(left)),
                                         Tensor(np.ascontiguousarray(right))),
                         gt_disparity=gt, valid_mask=valid)


MIN_CROP_VALID_FRACTION = 0.01
MAX_CROP_TRIES = 10


def random_crop(sample: LabeledSample, crop_h: int, crop_w: int,
                rng: np.random.Generator) -> LabeledSample:
    """Uniform crop, resampled up to MAX_CROP_TRIES times until at least 1%
    of its ground truth is valid; otherwise the best try wins."""
    h, w = sample.pair.height, sample.pair.width
    if crop_h > h or crop_w > w:
        raise ValueError(f"crop {crop_w}x{crop_h} larger than image {w}x{h}")
    best = None
    best_frac = -1.0
    for _ in range(MAX_CROP_TRIES):
        y0 = int(rng.integers(0, h - crop_h + 1))
        x0 = int(rng.integers(0, w - crop_w + 1))
        frac = float(sample.valid_mask[y0:y0 + crop_h, x0:x0 + crop_w].mean())
        if frac > best_frac:
            best, best_frac = (y0, x0), frac
        if frac >= MIN_CROP_VALID_FRACTION:
            break
    y0, x0 = best
    ys, xs = slice(y0, y0 + crop_h), slice(x0, x0 + crop_w)
    return LabeledSample(
        pair=StereoPair(Tensor(np.ascontiguousarray(sample.pair.left.data[:, ys, xs])),
                        Tensor(np.ascontiguousarray(sample.pair.right.data[:, ys, xs]))),
        gt_disparity=sample.gt_disparity[ys, xs].copy(),
        valid_mask=sample.valid_mask[ys, xs].copy())


def _sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(epoch, index)))


def _shuffle_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(epoch, 1 << 24)))


def train_epoch(dataset, weights: WeightSet, state: OptimizerState,
                model_cfg: ModelConfig, loss_cfg: LossConfig, train_cfg: TrainConfig,
                epoch: int) -> EpochStats:
    """One pass over shuffled random crops; returns mean loss components.

    The disparity terms sum over a batch per the training objective; the
    nsce and smoothness terms average over batch elements.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if train_cfg.crop_h % model_cfg.cv_scale or train_cfg.crop_w % model_cfg.cv_scale:
        raise ValueError(f"crop {train_cfg.crop_w}x{train_cfg.crop_h} not divisible "
                         f"by cv_scale {model_cfg.cv_scale}")
    start = time.perf_counter()
    lr = poly_lr(epoch, train_cfg.epochs, train_cfg.lr0, train_cfg.poly_power)
    flags = AugmentFlags.from_config(train_cfg)

    order = list(range(len(dataset)))
    _shuffle_rng(train_cfg.seed, epoch).shuffle(order)

    sums = np.zeros(5)  # l_hr, l_lr, l_nsce, l_smooth, total
    n_batches = 0
    for b0 in range(0, len(order), train_cfg.batch_size):
        batch = order[b0:b0 + train_cfg.batch_size]
        nb = len(batch)
        l_hr = l_lr = l_nsce = l_smooth = None

        def acc(total, term):
            return term if total is None else T.add(total, term)

        for idx in batch:
            rng = _sample_rng(train_cfg.seed, epoch, idx)
            sample = random_crop(dataset[idx], train_cfg.crop_h, train_cfg.crop_w, rng)
            sample = augment(sample, flags, rng)
            out = MO.forward(sample.pair, weights, model_cfg)
            gt_lr, valid_lr = LO.downsample_gt_disparity(sample.gt_disparity,
                                                         sample.valid_mask,
                                                         model_cfg.cv_scale)
            l_hr = acc(l_hr, LO.disparity_loss(out.d_hr, sample.gt_disparity,
                                               sample.valid_mask))
            l_lr = acc(l_lr, LO.disparity_loss(out.d_lr, gt_lr, valid_lr))
            l_nsce = acc(l_nsce, LO.nsce_loss(out.prob_volume, gt_lr, valid_lr,
                                              loss_cfg.nsce_sigma, rng))
            l_smooth = acc(l_smooth, LO.smoothness_loss(out.d_hr, sample.pair.left,
                                                        loss_cfg.smooth_edge_gain))

        l_nsce = T.mul(l_nsce, 1.0 / nb)
        l_smooth = T.mul(l_smooth, 1.0 / nb)
        total = T.add(T.add(T.mul(l_hr, loss_cfg.lambda1), T.mul(l_lr, loss_cfg.lambda2)),
                      T.add(T.mul(l_nsce, loss_cfg.lambda3),
                            T.mul(l_smooth, loss_cfg.lambda4)))

        weights.zero_grads()
        total.backward()
        adam_step(weights, state, lr, train_cfg.beta1, train_cfg.beta2, train_cfg.eps)

        sums += (l_hr.item(), l_lr.item(), l_nsce.item(), l_smooth.item(), total.item())
        n_batches += 1

    means = sums / n_batches
    return EpochStats(epoch=epoch, lr=lr, l_hr=means[0], l_lr=means[1],
                      l_nsce=means[2], l_smooth=means[3], total=means[4],
                      wall_seconds=time.perf_counter() - start)


def train_model(dataset, model_cfg: ModelConfig, loss_cfg: LossConfig,
                train_cfg: TrainConfig, weights: WeightSet | None = None,
                log_stream=None) -> tuple[WeightSet, list[EpochStats]]:
    """Full training loop. Writes one tab-separated line per epoch to
    log_stream (epoch, lr, L_hr, L_lr, L_nsce, L_smooth, total, seconds)."""
    if weights is None:
        weights = MO.init_model_weights(model_cfg, seed=train_cfg.seed)
    state = OptimizerState(weights)
    history = []
    for epoch in range(train_cfg.epochs):
        stats = train_epoch(dataset, weights, state, model_cfg, loss_cfg, train_cfg, epoch)
        history.append(stats)
        if log_stream is not None:
            print(stats.log_line(), file=log_stream, flush=True)
    return weights, history


def evaluate_epe(dataset, weights: WeightSet, model_cfg: ModelConfig) -> float:
    """Pooled mean absolute full-resolution disparity error over the valid
    pixels of every sample."""
    total_err = 0.0
    total_n = 0
    with T.no_grad():
        for sample in dataset:
            out = MO.forward(sample.pair, weights, model_cfg)
            err = np.abs(out.d_hr.data - sample.gt_disparity)[sample.valid_mask]
            total_err += float(err.sum())
            total_n += err.size
    if total_n == 0:
        raise ValueError("no valid pixels to evaluate")
    return total_err / total_n
