"""
Tests for the training recipe
=============================

Composite loss, OHEM selection, the learning-rate schedule and the SGD loop.
"""

import math
import os

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.errors import ConfigError, DataError, NumericError, ShapeError
from app.data import AugmentParams
from app.model import build_model, load_checkpoint, read_checkpoint
from app.nn import functional as F
from app.nn.optim import sgd_momentum_step
from app.training import (
    CsvLossSink,
    OhemConfig,
    TrainConfig,
    Trainer,
    head_loss,
    ohem_reduce,
    poly_lr,
    total_loss,
    train_loop,
)


def quick_config(**changes):
    values = dict(max_iters=4, warmup_iters=1, batch_size=2, seed=11, log_interval=1)
    values.update(changes)
    return TrainConfig(**values)


# =============================================================================
# Losses
# =============================================================================


class TestTotalLoss:
    def test_alpha_zero(self):
        assert total_loss(0.8, [0.4, 0.6], 0.0) == 0.8

    def test_weighted_sum(self):
        assert total_loss(1.0, [0.4, 0.6], 0.5) == pytest.approx(1.5)

    def test_no_aux(self):
        assert total_loss(0.3, [], 0.5) == 0.3


class TestOhem:
    def test_degenerates_to_mean(self):
        loss = np.array([1.0, 2.0, 6.0])
        selection = ohem_reduce(loss, np.full(3, 0.9), OhemConfig(min_kept=3))
        assert selection.mask.all()
        assert selection.loss == pytest.approx(3.0)

    def test_threshold_selects_hard_pixels(self):
        selection = ohem_reduce(
            np.array([0.1, 0.5, 0.7]),
            np.array([0.9, 0.6, 0.5]),
            OhemConfig(prob_thresh=0.7, min_kept=1),
        )
        assert selection.mask.tolist() == [False, True, True]
        assert selection.loss == pytest.approx(0.6)

    def test_top_k_fallback(self):
        selection = ohem_reduce(
            np.array([3.0, 1.0, 2.0]),
            np.full(3, 0.99),
            OhemConfig(prob_thresh=0.7, min_kept=2),
        )
        assert selection.mask.tolist() == [True, False, True]
        assert selection.loss == pytest.approx(2.5)

    def test_ties_keep_pixel_order(self):
        selection = ohem_reduce(np.ones(4), np.ones(4), OhemConfig(min_kept=2))
        assert selection.mask.tolist() == [True, True, False, False]

    def test_kept_set_never_below_min_kept(self, rng):
        for _ in range(20):
            loss = rng.random(50)
            prob = rng.random(50)
            min_kept = int(rng.integers(1, 80))
            selection = ohem_reduce(loss, prob, OhemConfig(prob_thresh=0.3, min_kept=min_kept))
            assert selection.mask.sum() >= min(min_kept, 50)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ohem_reduce(np.ones(3), np.ones(4), OhemConfig())

    def test_min_kept_scales_with_pixels(self):
        ohem = OhemConfig()
        assert ohem.scaled_min_kept(1, 400, 400) == 2500
        assert ohem.scaled_min_kept(4, 128, 128) == 1024
        assert ohem.scaled_min_kept(1, 4, 4) == 1


class TestHeadLoss:
    def test_plain_cross_entropy(self):
        logits = np.zeros((1, 2, 2, 2))
        labels = np.array([[[[0, 1], [1, 0]]]])
        result = head_loss(logits, labels, None)
        assert result.loss == pytest.approx(math.log(2.0))
        assert result.kept == 4
        np.testing.assert_allclose(np.abs(result.grad), 0.125)

    def test_ohem_gradient_only_on_kept_pixels(self):
        logits = np.zeros((1, 2, 1, 4))
        logits[0, 0, 0, :2] = 5.0
        labels = np.zeros((1, 1, 1, 4))
        result = head_loss(logits, labels, OhemConfig(prob_thresh=0.7, min_kept=1))
        assert result.kept == 2
        assert not result.grad[..., :2].any()
        assert result.grad[..., 2:].any()
        assert result.loss == pytest.approx(math.log(2.0))

    def test_gradient_matches_finite_differences(self, rng):
        logits = rng.standard_normal((1, 2, 3, 3))
        labels = rng.integers(0, 2, (1, 1, 3, 3))
        result = head_loss(logits, labels, None)
        step = 1e-6
        for idx in [(0, 0, 0, 0), (0, 1, 2, 1), (0, 0, 1, 2)]:
            plus, minus = logits.copy(), logits.copy()
            plus[idx] += step
            minus[idx] -= step
            numeric = (head_loss(plus, labels, None).loss - head_loss(minus, labels, None).loss)
            assert result.grad[idx] == pytest.approx(numeric / (2 * step), rel=1e-5)


# =============================================================================
# Schedule and config
# =============================================================================


class TestPolyLr:
    def test_endpoint_is_zero(self):
        cfg = TrainConfig(max_iters=1000, warmup_iters=100)
        assert poly_lr(1000, cfg) == 0.0

    def test_midpoint(self):
        cfg = TrainConfig(max_iters=1000, warmup_iters=0)
        assert poly_lr(500, cfg) == pytest.approx(0.01 * 0.5**0.9)
        assert poly_lr(500, cfg) == pytest.approx(0.005359, abs=1e-6)

    def test_warmup_ramp(self):
        cfg = TrainConfig(max_iters=1000, warmup_iters=100)
        assert poly_lr(0, cfg) == pytest.approx(0.0001)
        assert poly_lr(99, cfg) == pytest.approx(0.01)

    def test_monotone_after_warmup_and_positive(self):
        cfg = TrainConfig(max_iters=300, warmup_iters=20)
        rates = [poly_lr(i, cfg) for i in range(cfg.max_iters)]
        assert all(r > 0 for r in rates)
        tail = rates[cfg.warmup_iters:]
        assert all(a >= b for a, b in zip(tail, tail[1:]))

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            poly_lr(11, TrainConfig(max_iters=10, warmup_iters=0))


class TestTrainConfig:
    def test_warmup_must_end_before_training(self):
        with pytest.raises(ValidationError, match="warmup_iters"):
            TrainConfig(max_iters=10, warmup_iters=10)

    def test_ohem_keys(self):
        cfg = TrainConfig.from_mapping({"ohem_min_kept": "100", "ohem_enabled": "false"})
        assert cfg.ohem.min_kept == 100 and not cfg.ohem.enabled

    def test_unknown_keys_named(self):
        with pytest.raises(ConfigError, match="'ohem_foo'"):
            TrainConfig.from_mapping({"ohem_foo": "1"})
        with pytest.raises(ConfigError, match="unknown key 'lr'"):
            TrainConfig.from_mapping({"lr": "0.1"})

    def test_overrides_revalidate(self):
        cfg = TrainConfig().with_overrides(base_lr=0.001)
        assert cfg.base_lr == 0.001
        with pytest.raises(ConfigError):
            cfg.with_overrides(batch_size=0)


# =============================================================================
# Training loop
# =============================================================================


class TestTrainLoop:
    def test_zero_iterations_leave_model_unchanged(self, small_config, dataset):
        model = build_model(small_config, seed=0)
        before = {k: v.copy() for k, v in model.state_dict().items()}
        result = train_loop(model, dataset, TrainConfig(max_iters=0, warmup_iters=0, batch_size=2))
        assert result.history == []
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(value, before[name])

    def test_runs_are_deterministic(self, small_config, dataset, deterministic):
        cfg = quick_config(max_iters=10, warmup_iters=2)
        params = AugmentParams(crop=(64, 64))
        losses = []
        for _ in range(2):
            model = build_model(small_config, seed=0)
            result = train_loop(model, dataset, cfg, augment_params=params)
            losses.append([r.total_loss for r in result.history])
        assert len(losses[0]) == 10
        np.testing.assert_allclose(losses[0], losses[1], rtol=0, atol=1e-12)
        assert all(math.isfinite(v) for v in losses[0])

    def test_prefetch_matches_single_threaded(self, small_config, dataset, monkeypatch):
        from app.core.config import settings

        cfg = quick_config(max_iters=3)
        runs = []
        for deterministic in (True, False):
            monkeypatch.setattr(settings, "deterministic", deterministic)
            model = build_model(small_config, seed=0)
            runs.append([r.total_loss for r in train_loop(model, dataset, cfg).history])
        assert runs[0] == runs[1]

    def test_semantic_path_receives_updates(self, small_config, dataset):
        model = build_model(small_config, seed=0)
        before = {k: v.copy() for k, v in model.parameters().items()}
        train_loop(model, dataset, quick_config(max_iters=1, warmup_iters=0, weight_decay=0.0))
        after = model.parameters()
        names = (
            "block1.sg.0.conv.weight",
            "block3.sg.2.conv.weight",
            "block2.guide.1.conv.weight",
        )
        for name in names:
            assert not np.array_equal(after[name], before[name]), name

    def test_step_matches_plain_sgd(self, small_config, dataset):
        cfg = quick_config(max_iters=1, warmup_iters=0, alpha=0.0, ohem=OhemConfig(enabled=False))
        trained = build_model(small_config, seed=2, dtype=np.float64)
        trainer = Trainer(trained, dataset, cfg, AugmentParams.identity((64, 64)))
        images, masks = trainer.prepare_batch(0)
        trainer.step(0, (images, masks))

        oracle = build_model(small_config, seed=2, dtype=np.float64)
        logits = oracle.forward(images, "train").primary
        ce = F.softmax_ce_per_pixel(logits, masks)
        weights = np.full(ce.loss.shape, 1.0 / ce.loss.size)
        grads = oracle.backward(F.softmax_ce_backward(ce.probs, masks, weights))
        decay = set(oracle.decay_names)
        lr = poly_lr(0, cfg)
        for name, param in oracle.parameters().items():
            wd = cfg.weight_decay if name in decay else 0.0
            sgd_momentum_step(param, grads[name], np.zeros_like(param), lr, cfg.momentum, wd)

        expected = oracle.parameters()
        for name, value in trained.parameters().items():
            np.testing.assert_allclose(value, expected[name], rtol=1e-10, atol=1e-12)

    def test_csv_log(self, small_config, dataset, tmp_path):
        model = build_model(small_config, seed=0)
        sink = CsvLossSink(tmp_path / "loss.csv", num_aux=2)
        train_loop(model, dataset, quick_config(max_iters=3), sink=sink)
        lines = (tmp_path / "loss.csv").read_text().splitlines()
        assert lines[0] == "iter,lr,total_loss,primary_loss,aux1,aux2"
        assert [line.split(",")[0] for line in lines[1:]] == ["0", "1", "2"]
        assert all(len(line.split(",")) == 6 for line in lines[1:])

    def test_checkpoints_written(self, small_config, dataset, tmp_path):
        model = build_model(small_config, seed=0)
        result = train_loop(
            model, dataset, quick_config(checkpoint_interval=2), out_dir=tmp_path
        )
        names = sorted(p.name for p in tmp_path.glob("*.hrsg"))
        assert names == [
            "checkpoint_000002.hrsg",
            "checkpoint_000004.hrsg",
            "checkpoint_final.hrsg",
        ]
        assert result.last_checkpoint == tmp_path / "checkpoint_final.hrsg"
        assert read_checkpoint(result.last_checkpoint).iteration == 4

    def test_resume_continues_the_same_run(self, small_config, dataset, tmp_path, deterministic):
        cfg = quick_config(max_iters=4, checkpoint_interval=2)
        straight = train_loop(build_model(small_config, seed=0), dataset, cfg, out_dir=tmp_path)

        midway = tmp_path / "checkpoint_000002.hrsg"
        payload = read_checkpoint(midway)
        resumed = train_loop(
            load_checkpoint(midway), dataset, cfg.with_overrides(checkpoint_interval=0),
            start_iteration=payload.iteration, velocities=payload.velocities,
        )
        tail = [r.total_loss for r in straight.history[2:]]
        assert [r.iteration for r in resumed.history] == [2, 3]
        np.testing.assert_allclose([r.total_loss for r in resumed.history], tail, rtol=1e-6)

    def test_dataset_smaller_than_batch(self, small_config, dataset):
        with pytest.raises(DataError, match="batch_size"):
            train_loop(build_model(small_config), dataset, quick_config(batch_size=8))

    def test_rejected_run_closes_loss_log(self, small_config, dataset, tmp_path):
        sink = CsvLossSink(tmp_path / "loss.csv", num_aux=2)
        with pytest.raises(DataError, match="batch_size"):
            train_loop(build_model(small_config), dataset, quick_config(batch_size=8), sink=sink)
        assert sink._fh is None
        assert (tmp_path / "loss.csv").read_text() == "iter,lr,total_loss,primary_loss,aux1,aux2\n"

    def test_non_finite_loss(self, small_config, dataset):
        model = build_model(small_config, seed=0)
        model.parameters()["head.cls.bias"][...] = np.nan
        with pytest.raises(NumericError, match="iteration 0"):
            train_loop(model, dataset, quick_config())


@pytest.mark.slow
@pytest.mark.integration
@pytest.mark.skipif(not os.environ.get("HRSEG_RUN_SLOW"), reason="set HRSEG_RUN_SLOW=1")
def test_overfit_synthetic_set(tmp_path):
    from scripts.overfit_demo import PROJECT_ROOT, run

    miou = run(PROJECT_ROOT / "configs" / "overfit.cfg", tmp_path, count=20, size=128, seed=7)
    assert miou >= 0.90
