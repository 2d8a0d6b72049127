"""The four-term training objective.

Total = l1 * disparity(d_hr) + l2 * disparity(d_lr) + l3 * nsce + l4 * smooth.

The disparity terms are per-batch-element masked smooth-L1 sums, each
scaled by (mean + 2 * std) of that element's valid ground truth. The noise
sampling cross entropy regularizes the probability volume toward a
unimodal peak at a jittered ground-truth disparity, and the smoothness
term penalizes disparity curvature away from image edges.

Ground-truth labels may be sparse; valid_mask excludes unlabeled pixels
from the disparity and nsce terms. Smoothness needs no labels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import StereoOutput, StereoPair
from .tensor import ShapeError, Tensor

PROB_FLOOR = 1e-30  # keeps log(prob) finite when softmax underflows


@dataclass
class LossConfig:
    lambda1: float = 100.0
    lambda2: float = 100.0
    lambda3: float = 0.2
    lambda4: float = 20.0
    nsce_sigma: float = 1.0
    smooth_edge_gain: float = 10.0

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.nsce_sigma <= 0:
            raise ValueError("nsce_sigma must be > 0")


@dataclass
class LabeledSample:
    """A stereo pair with (possibly sparse) ground-truth disparity."""

    pair: StereoPair
    gt_disparity: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        self.gt_disparity = np.asarray(self.gt_disparity, dtype=np.float32)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        h, w = self.pair.height, self.pair.width
        if self.gt_disparity.shape != (h, w) or self.valid_mask.shape != (h, w):
            raise ShapeError(
                f"labels {self.gt_disparity.shape}/{self.valid_mask.shape} do not match "
                f"images {h}x{w}")
        if not np.isfinite(self.gt_disparity[self.valid_mask]).all():
            raise ValueError("non-finite ground truth inside valid_mask")


@dataclass
class LossBreakdown:
    """Weighted total (a graph Tensor) plus unweighted components."""

    total: Tensor
    l_hr: float
    l_lr: float
    l_nsce: float
    l_smooth: float


def smooth_l1(x):
    """0.5 x^2 below |x| = 1, |x| - 0.5 beyond; continuous and C1 at 1.

    Accepts a Tensor (elementwise) or a plain float.
    """
    if not isinstance(x, Tensor):
        ax = abs(float(x))
        return 0.5 * x * x if ax < 1.0 else ax - 0.5
    ax = T.absolute(x)
    quad = T.mul(T.mul(x, x), 0.5)
    lin = T.sub(ax, 0.5)
    return T.where(ax.data < 1.0, quad, lin)


def _element_disparity_loss(pred: Tensor, gt: np.ndarray, valid: np.ndarray) -> Tensor:
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    n_valid = int(valid.sum())
    if n_valid == 0:
        warnings.warn("disparity_loss: batch element has no valid pixels, contributing 0",
                      stacklevel=3)
        return Tensor(np.zeros((), dtype=pred.dtype))
    vals = gt[valid].astype(np.float64)
    denom = max(float(vals.mean() + 2.0 * vals.std()), 1e-12)
    # sparse labels may hold NaN outside the mask; keep masked products finite
    gt_clean = np.where(valid, gt, 0.0).astype(pred.dtype.type)
    diff = T.sub(pred, Tensor(gt_clean))
    per_px = smooth_l1(diff)
    masked = T.mul(per_px, Tensor(valid.astype(pred.dtype.type)))
    return T.mul(masked.sum(), 1.0 / denom)


def disparity_loss(pred, gt, valid_mask) -> Tensor:
    """Scale-normalized smooth-L1 disparity loss.

    Accepts one element (pred: Tensor, gt/valid_mask: arrays) or a batch
    (sequences of each); batch elements are summed after each is divided
    by its own (mean + 2 std) of valid ground truth. Zero iff pred equals
    gt on every valid pixel.
    """
    if isinstance(pred, Tensor):
        pred, gt, valid_mask = [pred], [gt], [valid_mask]
    if not (len(pred) == len(gt) == len(valid_mask)):
        raise ValueError("batch lengths differ")
    total = None
    for p, g, v in zip(pred, gt, valid_mask):
        term = _element_disparity_loss(p, np.asarray(g), np.asarray(v, dtype=bool))
        total = term if total is None else T.add(total, term)
    return total


def downsample_gt_disparity(gt: np.ndarray, valid: np.ndarray,
                            scale: int) -> tuple[np.ndarray, np.ndarray]:
    """Average the valid full-resolution disparities in each scale x scale
    block and convert to low-resolution pixel units (divide by scale)."""
    h, w = gt.shape
    if h % scale or w % scale:
        raise ShapeError(f"gt dims {h}x{w} not divisible by scale {scale}")
    blocks = gt.reshape(h // scale, scale, w // scale, scale)
    vblocks = valid.reshape(h // scale, scale, w // scale, scale)
    counts = vblocks.sum(axis=(1, 3))
    # zero out invalid entries first: sparse labels may hold NaN there
    sums = np.where(vblocks, blocks, 0.0).sum(axis=(1, 3))
    valid_lr = counts > 0
    gt_lr = np.zeros_like(sums, dtype=np.float32)
    np.divide(sums, counts, out=gt_lr, where=valid_lr)
    return (gt_lr / scale).astype(np.float32), valid_lr


def nsce_loss(prob_volume: Tensor, gt_disparity_lr: np.ndarray,
              valid_mask_lr: np.ndarray, nsce_sigma: float,
              rng: np.random.Generator) -> Tensor:
    """Noise sampling cross entropy against a Gaussian-smoothed target.

    Each valid pixel's target disparity is jittered by Uniform(-0.5, 0.5),
    smoothed with a Gaussian of width nsce_sigma over the candidate axis,
    and normalized; the loss is the mean cross entropy over valid pixels.
    """
    dprime, h, w = prob_volume.shape
    gt = np.asarray(gt_disparity_lr, dtype=np.float64)
    valid = np.asarray(valid_mask_lr, dtype=bool)
    if gt.shape != (h, w) or valid.shape != (h, w):
        raise ShapeError(f"nsce labels {gt.shape} do not match prob volume {prob_volume.shape}")
    n_valid = int(valid.sum())
    if n_valid == 0:
        return Tensor(np.zeros((), dtype=prob_volume.dtype))

    jitter = rng.uniform(-0.5, 0.5, size=(h, w))
    d_tilde = np.where(valid, gt, 0.0) + jitter
    grid = np.arange(dprime, dtype=np.float64)[:, None, None]
    target = np.exp(-((grid - d_tilde[None]) ** 2) / (2.0 * nsce_sigma ** 2))
    target /= target.sum(axis=0, keepdims=True)
    target = target.astype(prob_volume.dtype.type)

    logp = T.log(T.maximum(prob_volume, PROB_FLOOR))
    ce = T.neg(T.reduce_sum(T.mul(logp, Tensor(target)), axis=0))
    masked = T.mul(ce, Tensor(valid.astype(prob_volume.dtype.type)))
    return T.mul(masked.sum(), 1.0 / n_valid)


def smoothness_loss(d_hr: Tensor, left_image, edge_gain: float = 10.0) -> Tensor:
    """Edge-aware second-order smoothness.

    Mean over interior pixels of |d_xx| * exp(-gain * |I_x|) plus the same
    along y, with image gradients from central differences averaged over
    color channels. Zero for planar disparity fields.
    """
    img = left_image.data if isinstance(left_image, Tensor) else np.asarray(left_image)
    if d_hr.ndim != 2 or img.ndim != 3 or img.shape[1:] != d_hr.shape:
        raise ShapeError(f"smoothness: disparity {d_hr.shape} vs image {img.shape}")
    dtype = d_hr.dtype.type
    ix = np.abs(img[:, :, 2:] - img[:, :, :-2]).mean(axis=0) * 0.5
    iy = np.abs(img[:, 2:, :] - img[:, :-2, :]).mean(axis=0) * 0.5
    wx = Tensor(np.exp(-edge_gain * ix).astype(dtype))
    wy = Tensor(np.exp(-edge_gain * iy).astype(dtype))

    dxx = T.absolute(T.sub(T.add(d_hr[:, 2:], d_hr[:, :-2]), T.mul(d_hr[:, 1:-1], 2.0)))
    dyy = T.absolute(T.sub(T.add(d_hr[2:, :], d_hr[:-2, :]), T.mul(d_hr[1:-1, :], 2.0)))
    return T.add(T.mul(dxx, wx).mean(), T.mul(dyy, wy).mean())


def total_loss(outputs: StereoOutput, sample: LabeledSample, config: LossConfig,
               rng: np.random.Generator) -> LossBreakdown:
    """Weighted sum of the four terms for a single sample; components are
    reported unweighted for logging."""
    gt = sample.gt_disparity
    valid = sample.valid_mask
    scale = sample.pair.height // outputs.d_lr.shape[0]
    gt_lr, valid_lr = downsample_gt_disparity(gt, valid, scale)

    l_hr = disparity_loss(outputs.d_hr, gt, valid)
    l_lr = disparity_loss(outputs.d_lr, gt_lr, valid_lr)
    l_nsce = nsce_loss(outputs.prob_volume, gt_lr, valid_lr, config.nsce_sigma, rng)
    l_smooth = smoothness_loss(outputs.d_hr, sample.pair.left, config.smooth_edge_gain)

    total = T.add(
        T.add(T.mul(l_hr, config.lambda1), T.mul(l_lr, config.lambda2)),
        T.add(T.mul(l_nsce, config.lambda3), T.mul(l_smooth, config.lambda4)))
    return LossBreakdown(total=total, l_hr=l_hr.item(), l_lr=l_lr.item(),
                         l_nsce=l_nsce.item(), l_smooth=l_smooth.item())
