"""Learned stereo depth: matching network, training, post-processing,
geometry, and a benchmark harness.

The hot convolution kernels run in a compiled extension when available,
with a NumPy fallback selected at import; `kernel_backend` names the one
in use.
"""

from ._kernels import BACKEND as kernel_backend
from .geometry import (CameraRig, PointCloud, default_rig, depth_to_disparity,
                       depth_to_points, disparity_budget, disparity_to_depth,
                       expected_depth_error, read_ply, rig_from_fov, voxelize,
                       write_ply, write_ply_file)
from .loss import (LabeledSample, LossBreakdown, LossConfig, disparity_loss,
                   downsample_gt_disparity, nsce_loss, smooth_l1, smoothness_loss,
                   total_loss)
from .metrics import MetricReport, compute_metrics
from .model import (ModelConfig, StereoOutput, StereoPair, WeightSet,
                    aggregate_cost, build_cost_volume, config_from_weights,
                    extract_features, forward, init_model_weights, load_weights,
                    matchability, refine, save_weights, soft_argmin)
from .formats import read_pfm, read_pgm, read_ppm, write_pfm, write_pfm_file, \
    write_pgm, write_ppm
from .postproc import (ConfidenceMap, FilteredDisparity, confidence_from_matchability,
                       filter_disparity, label_regions, nearest_upsample)
from .synth import Rect, SynthScene, load_dataset, random_scene, save_sample, synth_pair
from .tensor import ShapeError, Tensor, no_grad
from .train import (AugmentFlags, EpochStats, OptimizerState, TrainConfig, adam_step,
                    augment, evaluate_epe, poly_lr, random_crop, train_epoch,
                    train_model)

__version__ = "0.1.0"
