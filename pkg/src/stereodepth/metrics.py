"""Disparity evaluation metrics.

EPE is the mean absolute error over evaluated pixels, Bad(t) the fraction
with error strictly above t, RMSE the root mean squared error, and A90/A95
nearest-rank percentiles of the error distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLDS = (1.0, 2.0, 4.0)


@dataclass
class MetricReport:
    epe: float
    bad: dict[float, float]
    rmse: float
    a90: float
    a95: float
    n_evaluated: int
    n_masked: int

    def as_dict(self) -> dict:
        return {
            "epe": self.epe,
            "bad": {f"{t:g}": v for t, v in self.bad.items()},
            "rmse": self.rmse,
            "a90": self.a90,
            "a95": self.a95,
            "n_evaluated": self.n_evaluated,
            "n_masked": self.n_masked,
        }


def _nearest_rank(sorted_errors: np.ndarray, q: float) -> float:
    n = sorted_errors.size
    rank = int(np.ceil(q * n))
    return float(sorted_errors[max(rank, 1) - 1])


def compute_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None,
                    thresholds=DEFAULT_THRESHOLDS) -> MetricReport:
    """Evaluate a prediction against ground truth over masked pixels.

    Pixels outside the mask never influence any metric. Non-finite values
    inside the mask are rejected; callers deal with invalid pixels by
    shrinking the mask.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != pred.shape:
            raise ValueError(f"mask shape {mask.shape} does not match {pred.shape}")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("empty evaluation mask")
    p, g = pred[mask], gt[mask]
    if not (np.isfinite(p).all() and np.isfinite(g).all()):
        raise ValueError("non-finite values inside the evaluation mask")

    e = np.abs(p - g)
    e_sorted = np.sort(e)
    return MetricReport(
        epe=float(e.mean()),
        bad={float(t): float((e > t).mean()) for t in thresholds},
        rmse=float(np.sqrt((e * e).mean())),
        a90=_nearest_rank(e_sorted, 0.90),
        a95=_nearest_rank(e_sorted, 0.95),
        n_evaluated=n,
        n_masked=int(mask.size - n),
    )
