"""Procedural synthetic stereo pairs with exact ground truth.

A scene is a textured background plane plus fronto-parallel textured
rectangles, all at integer disparities. The right view is rendered by
shifting every surface by its disparity with painter's-algorithm
occlusion, so the ground truth is exact by construction and a left pixel
is valid exactly when its surface wins the z-buffer at its right-view
target. The left edge of a near rectangle therefore shadows a band of
background pixels (width = disparity difference), which come out invalid.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .formats import read_pgm, read_ppm, write_pfm_file, write_pgm, write_ppm, read_pfm
from .loss import LabeledSample
from .model import StereoPair
from .tensor import Tensor


@dataclass(frozen=True)
class Rect:
    x0: int
    y0: int
    width: int
    height: int
    disp: int


@dataclass(frozen=True)
class SynthScene:
    seed: int
    width: int
    height: int
    ndisp: int
    bg_disp: int
    rects: tuple[Rect, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("scene dimensions must be positive")
        for d in (self.bg_disp, *(r.disp for r in self.rects)):
            if not 0 <= d < self.ndisp:
                raise ValueError(f"disparity {d} outside [0, {self.ndisp})")
        for r in self.rects:
            if r.width < 1 or r.height < 1:
                raise ValueError("rectangle dimensions must be positive")
            if not (0 <= r.x0 and r.x0 + r.width <= self.width
                    and 0 <= r.y0 and r.y0 + r.height <= self.height):
                raise ValueError(f"rectangle {r} leaves the {self.width}x{self.height} frame")


def random_scene(seed: int, width: int, height: int, ndisp: int,
                 min_disp: int = 0, max_disp: int | None = None,
                 n_rects: tuple[int, int] = (2, 5),
                 rect_size: tuple[int, int] = (10, 28)) -> SynthScene:
    """Draw a scene whose disparities lie in [min_disp, max_disp]."""
    rng = np.random.default_rng(seed)
    if max_disp is None:
        max_disp = ndisp - 1
    bg = int(rng.integers(min_disp, min(min_disp + 3, max_disp) + 1))
    rects = []
    for _ in range(int(rng.integers(n_rects[0], n_rects[1] + 1))):
        w = int(rng.integers(rect_size[0], rect_size[1] + 1))
        h = int(rng.integers(rect_size[0], rect_size[1] + 1))
        w, h = min(w, width), min(h, height)
        x0 = int(rng.integers(0, width - w + 1))
        y0 = int(rng.integers(0, height - h + 1))
        d = int(rng.integers(bg, max_disp + 1))
        rects.append(Rect(x0, y0, w, h, d))
    return SynthScene(seed=seed, width=width, height=height, ndisp=ndisp,
                      bg_disp=bg, rects=tuple(rects))


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    """Bilinearly interpolated coarse noise, one octave of texture."""
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.uniform(0.0, 1.0, (3, gh, gw))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    y0 = ys.astype(np.intp)
    x0 = xs.astype(np.intp)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    g00 = np.take(np.take(grid, y0, axis=1), x0, axis=2)
    g01 = np.take(np.take(grid, y0, axis=1), x0 + 1, axis=2)
    g10 = np.take(np.take(grid, y0 + 1, axis=1), x0, axis=2)
    g11 = np.take(np.take(grid, y0 + 1, axis=1), x0 + 1, axis=2)
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


# (cell size, weight) octaves; mid/fine octaves carry most of the weight so
# the quarter-scale feature maps keep enough matching signal
TEXTURE_OCTAVES = ((13, 0.35), (5, 0.35), (2, 0.30))
TEXTURE_GRAIN = 0.03


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Multi-octave random texture in [0.02, 0.98], float32 [3,h,w]."""
    tex = sum(weight * _smooth_noise(rng, h, w, cell)
              for cell, weight in TEXTURE_OCTAVES)
    tex += rng.uniform(-TEXTURE_GRAIN, TEXTURE_GRAIN, tex.shape)
    lo, hi = tex.min(), tex.max()
    tex = 0.02 + 0.96 * (tex - lo) / max(hi - lo, 1e-9)
    return tex.astype(np.float32)


def synth_pair(scene: SynthScene, rng: np.random.Generator | None = None) -> LabeledSample:
    """Render a scene; textures come from rng (default: seeded by the scene,
    so equal scenes give bitwise-equal samples)."""
    if rng is None:
        rng = np.random.default_rng(scene.seed)
    h, w = scene.height, scene.width

    left = np.zeros((3, h, w), dtype=np.float32)
    right = np.zeros((3, h, w), dtype=np.float32)
    gt = np.zeros((h, w), dtype=np.float32)
    sid_left = np.zeros((h, w), dtype=np.int32)
    sid_right = np.zeros((h, w), dtype=np.int32)

    # painter's order: far to near, ties resolved by object index in both views
    order = sorted(range(len(scene.rects)), key=lambda i: (scene.rects[i].disp, i))

    bg_tex = _texture(rng, h, w + scene.bg_disp)
    left[:] = bg_tex[:, :, :w]
    right[:] = bg_tex[:, :, scene.bg_disp:scene.bg_disp + w]
    gt[:] = scene.bg_disp

    rect_tex = {i: _texture(rng, scene.rects[i].height, scene.rects[i].width)
                for i in range(len(scene.rects))}
    for i in order:
        r = scene.rects[i]
        tex = rect_tex[i]
        ys = slice(r.y0, r.y0 + r.height)
        left[:, ys, r.x0:r.x0 + r.width] = tex
        gt[ys, r.x0:r.x0 + r.width] = r.disp
        sid_left[ys, r.x0:r.x0 + r.width] = i + 1
        rx0 = r.x0 - r.disp
        clip = max(0, -rx0)  # rectangle may slide off the right view's left edge
        if clip < r.width:
            right[:, ys, rx0 + clip:rx0 + r.width] = tex[:, :, clip:]
            sid_right[ys, rx0 + clip:rx0 + r.width] = i + 1

    xs = np.arange(w)[None, :]
    target = xs - gt.astype(np.int32)
    in_frame = target >= 0
    winner = np.take_along_axis(sid_right, np.clip(target, 0, w - 1), axis=1)
    valid = in_frame & (winner == sid_left)

    return LabeledSample(pair=StereoPair(Tensor(left), Tensor(right)),
                         gt_disparity=gt, valid_mask=valid)


# -- on-disk dataset ---------------------------------------------------------

def save_sample(directory, index: int, sample: LabeledSample) -> None:
    """Write one sample as PPM images, a PFM disparity (NaN where invalid),
    and a PGM validity mask."""
    os.makedirs(directory, exist_ok=True)
    stem = os.path.join(directory, f"{index:04d}")
    with open(f"{stem}_left.ppm", "wb") as f:
        f.write(write_ppm(sample.pair.left.data))
    with open(f"{stem}_right.ppm", "wb") as f:
        f.write(write_ppm(sample.pair.right.data))
    disp = sample.gt_disparity.copy()
    disp[~sample.valid_mask] = np.nan
    write_pfm_file(f"{stem}_disp.pfm", disp)
    with open(f"{stem}_mask.pgm", "wb") as f:
        f.write(write_pgm(sample.valid_mask))


def load_dataset(directory) -> list[LabeledSample]:
    """Load every sample saved by save_sample, in index order."""
    pattern = re.compile(r"^(\d{4})_left\.ppm$")
    stems = sorted(m.group(1) for m in map(pattern.match, os.listdir(directory)) if m)
    if not stems:
        raise FileNotFoundError(f"no samples (NNNN_left.ppm) found in {directory}")
    samples = []
    for stem in stems:
        base = os.path.join(directory, stem)
        left = read_ppm(f"{base}_left.ppm")
        right = read_ppm(f"{base}_right.ppm")
        disp, _ = read_pfm(f"{base}_disp.pfm")
        mask_path = f"{base}_mask.pgm"
        if os.path.exists(mask_path):
            valid = read_pgm(mask_path) > 127
        else:
            valid = np.isfinite(disp)
        disp = np.where(valid, disp, 0.0).astype(np.float32)
        samples.append(LabeledSample(pair=StereoPair(Tensor(left), Tensor(right)),
                                     gt_disparity=disp, valid_mask=valid))
    return samples
