"""The learned matching network.

Five stages: a shared-weight dilated-residual feature encoder, a
per-channel cross-correlation cost volume, 3-D then 2-D aggregation, a
soft-argmin disparity head with a matchability confidence, and a
full-resolution refinement network that adds a residual to the upsampled
low-resolution disparity.

All stages are pure functions over a WeightSet, so a forward pass is
deterministic given weights and input, and the same WeightSet may serve
concurrent forward passes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

LEAKY_SLOPE = 0.1
AGG_DILATIONS = (1, 2, 5, 9)
MATCH_FLOOR = 1e-30  # keeps log(mass) finite when the window mass underflows


@dataclass
class ModelConfig:
    """Network sizing. ndisp counts full-resolution disparities; the cost
    volume runs at 1/cv_scale resolution with ndisp/cv_scale candidates."""

    ndisp: int = 384
    cv_scale: int = 8
    feat_channels: int = 16
    agg_3d_channels: tuple[int, int] = (8, 4)
    agg_2d_blocks: int = 4
    refine_channels: int = 16
    enc_channels: int | None = None  # encoder internal width; None = feat_channels

    def __post_init__(self):
        if self.cv_scale not in (4, 8):
            raise ValueError(f"cv_scale must be 4 or 8, got {self.cv_scale}")
        if self.ndisp % self.cv_scale != 0:
            raise ValueError(f"ndisp {self.ndisp} not divisible by cv_scale {self.cv_scale}")
        if self.feat_channels < 1:
            raise ValueError(f"feat_channels must be >= 1, got {self.feat_channels}")
        if self.ndisp_lr < 2:
            raise ValueError(f"ndisp/cv_scale must be >= 2, got {self.ndisp_lr}")
        if len(self.agg_3d_channels) != 2 or min(self.agg_3d_channels) < 1:
            raise ValueError(f"agg_3d_channels must be two positive ints, got {self.agg_3d_channels}")
        if self.agg_2d_blocks < 1:
            raise ValueError(f"agg_2d_blocks must be >= 1, got {self.agg_2d_blocks}")
        if self.enc_channels is not None and self.enc_channels < 1:
            raise ValueError(f"enc_channels must be >= 1, got {self.enc_channels}")

    @property
    def ndisp_lr(self) -> int:
        return self.ndisp // self.cv_scale

    @property
    def enc_width(self) -> int:
        return self.enc_channels if self.enc_channels is not None else self.feat_channels

    @property
    def n_stems(self) -> int:
        return {4: 2, 8: 3}[self.cv_scale]


@dataclass
class StereoPair:
    """Rectified [3,H,W] color images in [0,1], identical shapes."""

    left: Tensor
    right: Tensor

    def __post_init__(self):
        if self.left.shape != self.right.shape:
            raise ShapeError(f"stereo pair shapes differ: {self.left.shape} vs {self.right.shape}")
        if self.left.ndim != 3 or self.left.shape[0] != 3:
            raise ShapeError(f"expected [3,H,W] images, got {self.left.shape}")

    @property
    def height(self) -> int:
        return self.left.shape[1]

    @property
    def width(self) -> int:
        return self.left.shape[2]


@dataclass
class StereoOutput:
    """d_lr is in low-resolution pixel units, d_hr in full-resolution units;
    matchability is the log window mass (<= 0); prob_volume is the softmax
    over disparity candidates."""

    d_lr: Tensor
    d_hr: Tensor
    matchability: Tensor
    prob_volume: Tensor


class WeightSet:
    """Ordered, uniquely named map of layer weights."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def __setitem__(self, name: str, tensor: Tensor) -> None:
        if name in self._tensors:
            raise ValueError(f"duplicate weight name {name!r}")
        self._tensors[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise KeyError(f"weight {name!r} not found") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def copy(self) -> "WeightSet":
        out = WeightSet()
        for name, t in self._tensors.items():
            out[name] = Tensor(t.data.copy(), requires_grad=t.requires_grad)
        return out


def _he_std(fan_in: int) -> float:
    return float(np.sqrt(2.0 / fan_in))


def init_model_weights(config: ModelConfig, seed: int = 0) -> WeightSet:
    """He-initialized fp32 weights; biases zero. The final refinement conv
    starts near zero so d_hr begins as the plain upsampled disparity."""
    rng = np.random.default_rng(seed)
    ws = WeightSet()

    def conv(name, c_out, c_in, k, std=None, std3d=None):
        shape = (c_out, c_in, k, k) if std3d is None else (c_out, c_in, k, k, k)
        fan = c_in * k * k if std3d is None else c_in * k ** 3
        s = std if std is not None else _he_std(fan)
        ws[f"{name}.w"] = Tensor(rng.normal(0.0, s, shape).astype(np.float32),
                                 requires_grad=True)
        ws[f"{name}.b"] = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)

    def resblock(name, ch, k=3):
        fan = ch * k * k
        for part in ("1", "2"):
            ws[f"{name}.w{part}"] = Tensor(
                rng.normal(0.0, _he_std(fan), (ch, ch, k, k)).astype(np.float32),
                requires_grad=True)
            ws[f"{name}.b{part}"] = Tensor(np.zeros(ch, dtype=np.float32),
                                           requires_grad=True)

    ew = config.enc_width
    conv("enc.stem0", ew, 3, 3)
    for i in range(1, config.n_stems):
        conv(f"enc.stem{i}", ew, ew, 3)
    resblock("enc.res0", ew)
    resblock("enc.res1", ew)
    conv("enc.out", config.feat_channels, ew, 1)

    a1, a2 = config.agg_3d_channels
    conv("agg.c3d0", a1, config.feat_channels, 3, std3d=True)
    conv("agg.c3d1", a2, a1, 3, std3d=True)
    flat = a2 * config.ndisp_lr
    for i in range(config.agg_2d_blocks):
        resblock(f"agg.res{i}", flat)
    conv("agg.out", config.ndisp_lr, flat, 1)

    rc = config.refine_channels
    conv("ref.full", rc // 2, 5, 3)
    conv("ref.stem", rc, 5, 3)
    resblock("ref.res0", rc)
    resblock("ref.res1", rc)
    conv("ref.post", rc // 2, rc + rc // 2, 3)
    conv("ref.out", 1, rc // 2, 3, std=1e-3)
    return ws


def _lrelu(x: Tensor) -> Tensor:
    return T.leaky_relu(x, LEAKY_SLOPE)


def _res(x: Tensor, ws: WeightSet, name: str, dilation: int) -> Tensor:
    return T.residual_block2d(x, ws[f"{name}.w1"], ws[f"{name}.b1"],
                              ws[f"{name}.w2"], ws[f"{name}.b2"], dilation=dilation,
                              slope=LEAKY_SLOPE)


def extract_features(image: Tensor, weights: WeightSet, config: ModelConfig) -> Tensor:
    """[3,H,W] -> [feat_channels, H/s, W/s]; both towers share one WeightSet."""
    _, h, w = image.shape
    s = config.cv_scale
    if h % s or w % s:
        raise ShapeError(f"image dims {h}x{w} not divisible by cv_scale {s}")
    x = image
    for i in range(config.n_stems):
        x = _lrelu(T.conv2d(x, weights[f"enc.stem{i}.w"], weights[f"enc.stem{i}.b"],
                            stride=2, padding=1))
    x = _res(x, weights, "enc.res0", dilation=1)
    x = _res(x, weights, "enc.res1", dilation=2)
    return T.conv2d(x, weights["enc.out.w"], weights["enc.out.b"])


def build_cost_volume(f_left: Tensor, f_right: Tensor, ndisp_lr: int) -> Tensor:
    """4-D feature volume: per-channel products of left features with
    right features shifted by each candidate disparity."""
    return T.corr_volume(f_left, f_right, ndisp_lr)


def aggregate_cost(volume4d: Tensor, weights: WeightSet, config: ModelConfig) -> Tensor:
    """[C,D',H',W'] -> [D',H',W'] match scores (higher = better).

    Two 3-D convs shrink the channel axis, channels and disparities are
    flattened together, dilated 2-D residual blocks filter the result, and
    a 1x1 conv emits one score channel per disparity candidate.
    """
    x = _lrelu(T.conv3d(volume4d, weights["agg.c3d0.w"], weights["agg.c3d0.b"], padding=1))
    x = _lrelu(T.conv3d(x, weights["agg.c3d1.w"], weights["agg.c3d1.b"], padding=1))
    a2, dlr, h, w = x.shape
    x = T.reshape(x, (a2 * dlr, h, w))
    for i in range(config.agg_2d_blocks):
        x = _res(x, weights, f"agg.res{i}", dilation=AGG_DILATIONS[i % len(AGG_DILATIONS)])
    return T.conv2d(x, weights["agg.out.w"], weights["agg.out.b"])


def soft_argmin(scores: Tensor) -> tuple[Tensor, Tensor]:
    """Expected disparity under a softmax over match scores.

    Returns (d_lr, prob_volume); d_lr lies in [0, D'-1] by construction.
    """
    if scores.ndim != 3 or scores.shape[0] < 2:
        raise ShapeError(f"soft_argmin: expected [D>=2,H,W] scores, got {scores.shape}")
    prob = T.softmax_axis(scores, 0)
    grid = np.broadcast_to(
        np.arange(scores.shape[0], dtype=scores.dtype.type)[:, None, None], scores.shape)
    d_lr = T.reduce_sum(T.mul(prob, Tensor(np.ascontiguousarray(grid))), axis=0)
    return d_lr, prob


def matchability(prob_volume: Tensor, d_lr: Tensor) -> Tensor:
    """Log probability mass within one disparity candidate of the estimate.

    The window is selected from the current estimate's values and treated
    as constant under differentiation; gradients flow through the mass.
    """
    dgrid = np.arange(prob_volume.shape[0], dtype=prob_volume.dtype.type)[:, None, None]
    window = np.abs(dgrid - d_lr.data[None]) <= 1.0
    mass = T.reduce_sum(T.mul(prob_volume, Tensor(window.astype(prob_volume.dtype.type))),
                        axis=0)
    mass = T.maximum(T.minimum(mass, 1.0), MATCH_FLOOR)
    return T.log(mass)


def refine(left_image: Tensor, d_lr: Tensor, match: Tensor, weights: WeightSet,
           config: ModelConfig) -> Tensor:
    """Full-resolution disparity: s * upsample(d_lr) plus a learned residual.

    The residual network sees the image, the upsampled disparity scaled to
    about [0,1], and the upsampled matchability. A dilated encoder-decoder
    at half resolution provides context; a parallel full-resolution conv
    keeps the fine image detail the strided path discards; both merge into
    a single-channel residual.
    """
    s = config.cv_scale
    _, h, w = left_image.shape
    if d_lr.shape != (h // s, w // s):
        raise ShapeError(f"refine: d_lr shape {d_lr.shape} does not match image {h}x{w} at 1/{s}")
    up_d = T.bilinear_upsample(d_lr, s)
    up_m = T.bilinear_upsample(match, s)
    norm = 1.0 / max(config.ndisp_lr - 1, 1)
    feats = T.concat([left_image,
                      T.reshape(T.mul(up_d, norm), (1, h, w)),
                      T.reshape(up_m, (1, h, w))], axis=0)
    fine = _lrelu(T.conv2d(feats, weights["ref.full.w"], weights["ref.full.b"], padding=1))
    x = _lrelu(T.conv2d(feats, weights["ref.stem.w"], weights["ref.stem.b"],
                        stride=2, padding=1))
    x = _res(x, weights, "ref.res0", dilation=1)
    x = _res(x, weights, "ref.res1", dilation=2)
    x = T.bilinear_upsample(x, 2)
    x = _lrelu(T.conv2d(T.concat([x, fine], axis=0),
                        weights["ref.post.w"], weights["ref.post.b"], padding=1))
    residual = T.conv2d(x, weights["ref.out.w"], weights["ref.out.b"], padding=1)
    return T.add(T.mul(up_d, float(s)), T.reshape(residual, (h, w)))


def forward(pair: StereoPair, weights: WeightSet, config: ModelConfig) -> StereoOutput:
    """Run the full five-stage network on one rectified pair."""
    f_left = extract_features(pair.left, weights, config)
    f_right = extract_features(pair.right, weights, config)
    volume = build_cost_volume(f_left, f_right, config.ndisp_lr)
    scores = aggregate_cost(volume, weights, config)
    d_lr, prob = soft_argmin(scores)
    match = matchability(prob, d_lr)
    d_hr = refine(pair.left, d_lr, match, weights, config)
    return StereoOutput(d_lr=d_lr, d_hr=d_hr, matchability=match, prob_volume=prob)


# -- weights file -----------------------------------------------------------
#
# Binary, little-endian: magic "STWT", u32 version=1, u32 tensor count,
# then per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
# fp32 data. Round-trips are bit-exact.

_MAGIC = b"STWT"
_VERSION = 1


def save_weights(weights: WeightSet, path) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(weights)))
        for name, t in weights.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", t.ndim))
            f.write(struct.pack(f"<{t.ndim}I", *t.shape))
            f.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_weights(path) -> WeightSet:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a weights file: bad magic {magic!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported weights version {version}")
        ws = WeightSet()
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n = int(np.prod(dims)) if rank else 1
            raw = f.read(4 * n)
            if len(raw) != 4 * n:
                raise ValueError(f"truncated weights file at tensor {name!r}")
            data = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
            ws[name] = Tensor(data, requires_grad=True)
    return ws


def config_from_weights(weights: WeightSet, ndisp: int, cv_scale: int) -> ModelConfig:
    """Reconstruct the sizing of a saved model, validating it against the
    requested disparity count and cost-volume scale."""
    n_stems = sum(1 for n in weights.names() if n.startswith("enc.stem") and n.endswith(".w"))
    if n_stems not in (2, 3):
        raise ValueError(f"unrecognized encoder layout ({n_stems} downsampling stems)")
    built_for = {2: 4, 3: 8}[n_stems]
    if built_for != cv_scale:
        raise ValueError(f"weights were built for cv_scale {built_for}, requested {cv_scale}")
    feat = weights["enc.out.w"].shape[0]
    enc = weights["enc.stem0.w"].shape[0]
    config = ModelConfig(
        ndisp=ndisp,
        cv_scale=cv_scale,
        feat_channels=feat,
        agg_3d_channels=(weights["agg.c3d0.w"].shape[0], weights["agg.c3d1.w"].shape[0]),
        agg_2d_blocks=sum(1 for n in weights.names()
                          if n.startswith("agg.res") and n.endswith(".w1")),
        refine_channels=weights["ref.stem.w"].shape[0],
        enc_channels=None if enc == feat else enc,
    )
    d_lr = weights["agg.out.w"].shape[0]
    if d_lr != config.ndisp_lr:
        raise ValueError(f"weights provide {d_lr} disparity candidates but "
                         f"ndisp/cv_scale = {config.ndisp_lr}")
    return config
