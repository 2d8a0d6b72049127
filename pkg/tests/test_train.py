"""Optimizer, schedule, augmentation, and epoch-loop contracts."""

import io

import numpy as np
import pytest

from stereodepth import loss as L
from stereodepth import model as M
from stereodepth import synth as S
from stereodepth import train as TR
from stereodepth.tensor import Tensor

TOY = M.ModelConfig(ndisp=16, cv_scale=4, feat_channels=4, agg_3d_channels=(4, 2),
                    agg_2d_blocks=1, refine_channels=4)


def tiny_dataset(n=6, seed0=0, size=32):
    return [S.synth_pair(S.random_scene(seed=seed0 + i, width=size, height=size,
                                        ndisp=16, min_disp=2, max_disp=12))
            for i in range(n)]


class TestPolyLr:
    def test_start_is_lr0(self):
        assert TR.poly_lr(0, 100, 1e-3) == pytest.approx(1e-3)

    def test_end_is_zero(self):
        assert TR.poly_lr(100, 100, 1e-3) == 0.0

    def test_midpoint_value(self):
        assert TR.poly_lr(50, 100, 1e-3) == pytest.approx(1e-3 * 0.5 ** 0.9, rel=1e-12)
        assert TR.poly_lr(50, 100, 1e-3) == pytest.approx(5.359e-4, rel=1e-3)

    def test_monotone_nonincreasing(self):
        vals = [TR.poly_lr(t, 50, 1e-3) for t in range(51)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            TR.poly_lr(101, 100, 1e-3)
        with pytest.raises(ValueError):
            TR.poly_lr(-1, 100, 1e-3)


def scalar_weightset(value, dtype=np.float64):
    ws = M.WeightSet()
    ws["w"] = Tensor(np.array([value], dtype=dtype), requires_grad=True)
    return ws


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        # bias-corrected first step with eps = 0 reduces to lr * sign(g)
        for g in (0.3, -2.0, 123.0):
            ws = scalar_weightset(1.0)
            ws["w"].grad = np.array([g])
            state = TR.OptimizerState(ws)
            TR.adam_step(ws, state, lr=0.01, eps=0.0)
            assert ws["w"].data[0] == pytest.approx(1.0 - 0.01 * np.sign(g), abs=1e-12)

    def test_zero_gradient_leaves_weights(self):
        ws = scalar_weightset(2.5)
        ws["w"].grad = np.zeros(1)
        state = TR.OptimizerState(ws)
        TR.adam_step(ws, state, lr=0.1)
        assert ws["w"].data[0] == 2.5
        assert state.t == 1

    def test_missing_gradient_names_weight(self):
        ws = M.WeightSet()
        ws["enc.stem0.w"] = Tensor(np.ones(2), requires_grad=True)
        state = TR.OptimizerState(ws)
        with pytest.raises(ValueError, match="enc.stem0.w"):
            TR.adam_step(ws, state, lr=0.1)

    def test_quadratic_convergence(self):
        # minimize w^2 from w=1 with lr 0.1: |w| < 1e-2 within 200 steps
        ws = scalar_weightset(1.0)
        state = TR.OptimizerState(ws)
        for _ in range(200):
            ws.zero_grads()
            loss = ws["w"] * ws["w"]
            loss.sum().backward()
            TR.adam_step(ws, state, lr=0.1)
        assert abs(ws["w"].data[0]) < 1e-2

    def test_matches_scalar_reference_simulation(self):
        # independent scalar simulation of bias-corrected Adam, float64
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        rng = np.random.default_rng(0)
        grads = rng.standard_normal(100)

        w_ref, m, v = 1.0, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w_ref -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)

        ws = scalar_weightset(1.0)
        state = TR.OptimizerState(ws)
        for g in grads:
            ws["w"].grad = np.array([g])
            TR.adam_step(ws, state, lr=lr, beta1=b1, beta2=b2, eps=eps)
        assert abs(ws["w"].data[0] - w_ref) <= 1e-10


class TestAugment:
    def _sample(self, seed=0):
        return tiny_dataset(1, seed0=seed)[0]

    def test_all_flags_off_is_identity(self):
        sample = self._sample()
        out = TR.augment(sample, TR.AugmentFlags(), np.random.default_rng(0))
        np.testing.assert_array_equal(out.pair.left.data, sample.pair.left.data)
        np.testing.assert_array_equal(out.pair.right.data, sample.pair.right.data)
        np.testing.assert_array_equal(out.gt_disparity, sample.gt_disparity)
        np.testing.assert_array_equal(out.valid_mask, sample.valid_mask)

    def test_vertical_flip_is_involution(self):
        sample = self._sample(1)
        flags = TR.AugmentFlags(flip=True)
        # find a seed whose first draw triggers the flip
        seed = next(s for s in range(100) if np.random.default_rng(s).random() < 0.5)
        once = TR.augment(sample, flags, np.random.default_rng(seed))
        assert not np.array_equal(once.pair.left.data, sample.pair.left.data)
        twice = TR.augment(once, flags, np.random.default_rng(seed))
        np.testing.assert_array_equal(twice.pair.left.data, sample.pair.left.data)
        np.testing.assert_array_equal(twice.gt_disparity, sample.gt_disparity)
        np.testing.assert_array_equal(twice.valid_mask, sample.valid_mask)

    def test_flip_moves_labels_with_images(self):
        sample = self._sample(2)
        seed = next(s for s in range(100) if np.random.default_rng(s).random() < 0.5)
        out = TR.augment(sample, TR.AugmentFlags(flip=True), np.random.default_rng(seed))
        np.testing.assert_array_equal(out.gt_disparity, sample.gt_disparity[::-1])
        np.testing.assert_array_equal(out.valid_mask, sample.valid_mask[::-1])

    def test_photometric_ops_leave_labels_bitwise(self):
        sample = self._sample(3)
        flags = TR.AugmentFlags(color_jitter=True, noise=True, blur=True)
        out = TR.augment(sample, flags, np.random.default_rng(5))
        assert out.gt_disparity.tobytes() == sample.gt_disparity.tobytes()
        assert out.valid_mask.tobytes() == sample.valid_mask.tobytes()
        assert not np.array_equal(out.pair.left.data, sample.pair.left.data)

    def test_jitter_identical_for_both_views(self):
        # constant-color images stay equal to each other under jitter
        img = np.full((3, 8, 8), 0.5, dtype=np.float32)
        sample = L.LabeledSample(pair=M.StereoPair(Tensor(img), Tensor(img.copy())),
                                 gt_disparity=np.zeros((8, 8), np.float32),
                                 valid_mask=np.ones((8, 8), bool))
        out = TR.augment(sample, TR.AugmentFlags(color_jitter=True),
                         np.random.default_rng(7))
        np.testing.assert_array_equal(out.pair.left.data, out.pair.right.data)

    def test_outputs_stay_in_range(self):
        sample = self._sample(4)
        flags = TR.AugmentFlags(flip=True, color_jitter=True, noise=True, blur=True)
        for seed in range(5):
            out = TR.augment(sample, flags, np.random.default_rng(seed))
            for img in (out.pair.left.data, out.pair.right.data):
                assert img.min() >= 0.0 and img.max() <= 1.0


class TestRandomCrop:
    def test_crop_too_large_rejected(self):
        sample = tiny_dataset(1)[0]
        with pytest.raises(ValueError, match="larger than image"):
            TR.random_crop(sample, 64, 64, np.random.default_rng(0))

    def test_crop_shape_and_content(self):
        sample = tiny_dataset(1, seed0=5)[0]
        out = TR.random_crop(sample, 16, 16, np.random.default_rng(1))
        assert out.pair.left.shape == (3, 16, 16)
        assert out.gt_disparity.shape == (16, 16)

    def test_prefers_crops_with_valid_pixels(self):
        # validity confined to the top rows: crops should end up there
        img = np.random.default_rng(0).uniform(0, 1, (3, 64, 16)).astype(np.float32)
        valid = np.zeros((64, 16), dtype=bool)
        valid[:32] = True
        sample = L.LabeledSample(pair=M.StereoPair(Tensor(img), Tensor(img.copy())),
                                 gt_disparity=np.ones((64, 16), np.float32),
                                 valid_mask=valid)
        hits = 0
        for seed in range(20):
            out = TR.random_crop(sample, 8, 8, np.random.default_rng(seed))
            hits += out.valid_mask.mean() >= TR.MIN_CROP_VALID_FRACTION
        assert hits >= 18  # 10 tries each make all-invalid crops rare


class TestTrainEpoch:
    def test_two_runs_bitwise_identical(self):
        data = tiny_dataset(4)
        cfg = TR.TrainConfig(lr0=1e-3, epochs=3, batch_size=2, crop_h=32, crop_w=32,
                             seed=11, flip=True, color_jitter=True, noise=True)

        def run():
            ws = M.init_model_weights(TOY, seed=cfg.seed)
            state = TR.OptimizerState(ws)
            for e in range(2):
                TR.train_epoch(data, ws, state, TOY, L.LossConfig(), cfg, e)
            return ws

        w1, w2 = run(), run()
        for name, t in w1.items():
            assert t.data.tobytes() == w2[name].data.tobytes(), name

    def test_learning_rate_schedule_applied(self):
        data = tiny_dataset(2)
        cfg = TR.TrainConfig(lr0=1e-3, epochs=4, batch_size=2, crop_h=32, crop_w=32, seed=0)
        ws = M.init_model_weights(TOY, seed=0)
        state = TR.OptimizerState(ws)
        for e in range(3):
            stats = TR.train_epoch(data, ws, state, TOY, L.LossConfig(), cfg, e)
            assert stats.lr == pytest.approx(TR.poly_lr(e, 4, 1e-3, 0.9))

    def test_log_line_format(self):
        stats = TR.EpochStats(epoch=3, lr=0.001, l_hr=1.5, l_lr=0.5, l_nsce=3.2,
                              l_smooth=0.01, total=205.64, wall_seconds=12.3456)
        fields = stats.log_line().split("\t")
        assert len(fields) == 8
        assert fields[0] == "3"
        assert float(fields[1]) == pytest.approx(0.001)
        assert float(fields[-1]) == pytest.approx(12.346, abs=1e-3)

    def test_indivisible_crop_rejected(self):
        data = tiny_dataset(2)
        cfg = TR.TrainConfig(lr0=1e-3, epochs=1, batch_size=2, crop_h=30, crop_w=32, seed=0)
        ws = M.init_model_weights(TOY, seed=0)
        with pytest.raises(ValueError, match="cv_scale"):
            TR.train_epoch(data, ws, TR.OptimizerState(ws), TOY, L.LossConfig(), cfg, 0)

    def test_train_model_writes_log(self):
        data = tiny_dataset(2)
        cfg = TR.TrainConfig(lr0=1e-3, epochs=2, batch_size=2, crop_h=32, crop_w=32, seed=3)
        stream = io.StringIO()
        _, history = TR.train_model(data, TOY, L.LossConfig(), cfg, log_stream=stream)
        lines = stream.getvalue().strip().splitlines()
        assert len(lines) == 2 and len(history) == 2
        assert lines[0].split("\t")[0] == "0"


class TestConfigValidation:
    def test_bad_values_rejected(self):
        with pytest.raises(ValueError):
            TR.TrainConfig(lr0=0.0)
        with pytest.raises(ValueError):
            TR.TrainConfig(poly_power=-1.0)
        with pytest.raises(ValueError):
            TR.TrainConfig(epochs=0)
