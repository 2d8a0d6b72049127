"""Validity filtering: confidence thresholding plus small-region removal.

A pixel survives when its confidence (exp of the matchability log-mass)
clears the threshold and its 4-connected component of confident pixels is
large enough. Disparity values are never modified, only the validity mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

CONF_THRESHOLD = 0.25
MIN_REGION_PX = 2000


@dataclass
class ConfidenceMap:
    """Per-pixel confidence in (0, 1]."""

    values: np.ndarray


@dataclass
class FilteredDisparity:
    disparity: np.ndarray
    valid: np.ndarray

    @property
    def valid_fraction(self) -> float:
        return float(self.valid.mean())


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def confidence_from_matchability(matchability) -> ConfidenceMap:
    """Elementwise exp of a log probability mass; rejects positive inputs,
    which would claim more than unit mass."""
    m = _as_array(matchability)
    if m.size and float(np.nanmax(m)) > 0.0:
        raise ValueError(f"matchability must be <= 0 everywhere, max is {np.nanmax(m):g}")
    return ConfidenceMap(values=np.exp(m))


def nearest_upsample(values: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor upsample of a [H,W] map; keeps confidence values
    exact probabilities instead of blending them."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    return np.repeat(np.repeat(values, factor, axis=0), factor, axis=1)


def label_regions(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """4-connected components of a boolean mask.

    Returns (labels, sizes): labels holds 1..K in row-major first-pixel
    order with 0 for background; sizes is indexed by label with
    sizes[0] = 0, so sizes.sum() equals the mask's true-pixel count.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)

    parent: list[int] = []

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    runs: list[tuple[int, int, int]] = []  # (y, start, end) per run id
    prev_row: list[tuple[int, int, int]] = []  # (start, end, run id)
    for y in range(h):
        padded = np.empty(w + 2, dtype=np.int8)
        padded[0] = padded[-1] = 0
        padded[1:-1] = mask[y]
        d = np.diff(padded)
        starts = np.flatnonzero(d == 1)
        ends = np.flatnonzero(d == -1)
        row_runs = []
        for s, e in zip(starts, ends):
            rid = len(parent)
            parent.append(rid)
            runs.append((y, int(s), int(e)))
            row_runs.append((int(s), int(e), rid))
        i = j = 0
        while i < len(prev_row) and j < len(row_runs):
            ps, pe, pid = prev_row[i]
            cs, ce, cid = row_runs[j]
            if ps < ce and cs < pe:  # column overlap = 4-connectivity
                ra, rb = find(pid), find(cid)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
            if pe <= ce:
                i += 1
            else:
                j += 1
        prev_row = row_runs

    label_of_root: dict[int, int] = {}
    for rid, (y, s, e) in enumerate(runs):
        root = find(rid)
        lab = label_of_root.setdefault(root, len(label_of_root) + 1)
        labels[y, s:e] = lab

    sizes = np.bincount(labels.ravel(), minlength=len(label_of_root) + 1).astype(np.int64)
    sizes[0] = 0
    return labels, sizes


def filter_disparity(d_hr, confidence, conf_threshold: float = CONF_THRESHOLD,
                     min_region: int = MIN_REGION_PX) -> FilteredDisparity:
    """Keep pixels whose confidence meets the (inclusive) threshold and
    whose confident 4-connected region holds at least min_region pixels."""
    if conf_threshold < 0 or min_region < 0:
        raise ValueError("thresholds must be >= 0")
    disp = _as_array(d_hr)
    conf = confidence.values if isinstance(confidence, ConfidenceMap) else _as_array(confidence)
    if conf.shape != disp.shape:
        raise ValueError(f"confidence shape {conf.shape} != disparity shape {disp.shape}")
    confident = conf >= conf_threshold
    labels, sizes = label_regions(confident)
    valid = confident & (sizes[labels] >= min_region)
    return FilteredDisparity(disparity=disp.copy(), valid=valid)
