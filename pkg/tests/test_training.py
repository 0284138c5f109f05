"""Learning-rate schedule, config handling, and training-loop tests."""

import dataclasses
import json
import math

import numpy as np
import pytest
import torch

from engagerec.models import build_small_cnn, init_checkpoint
from engagerec.preprocessing import AugmentParams
from engagerec.synthetic import make_separable_classes
from engagerec.training import (
    TrainConfig,
    TrainingDivergedError,
    default_train_config,
    load_train_config,
    lr_at_step,
    train,
    write_train_log,
)
from engagerec.training import _batches


class TestLrSchedule:
    def test_starts_at_initial(self):
        assert lr_at_step(0.002, 0.8, 500, 0) == 0.002

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_exact_at_decay_multiples(self, k):
        # g/s is exactly the integer k, so the power computes identically.
        assert lr_at_step(0.002, 0.8, 500, k * 500) == 0.002 * 0.8**k

    def test_monotone_non_increasing(self):
        rates = [lr_at_step(0.002, 0.8, 500, g) for g in range(0, 5001)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_rate_one_is_constant(self):
        assert lr_at_step(0.01, 1.0, 500, 4321) == 0.01

    def test_literal_closed_form(self):
        a0, r, s = 0.002, 0.8, 500
        for g in (0, 1, 2, 7, 50):
            assert lr_at_step(a0, r, s, g, literal=True) == a0 * r ** (g * (g + 1) / (2 * s))

    def test_literal_matches_recursion(self):
        a0, r, s = 0.01, 0.9, 10
        rate = a0
        for g in range(1, 40):
            rate *= r ** (g / s)
            assert lr_at_step(a0, r, s, g, literal=True) == pytest.approx(rate, rel=1e-12)

    def test_literal_decays_faster(self):
        assert lr_at_step(0.002, 0.8, 500, 2000, literal=True) < lr_at_step(0.002, 0.8, 500, 2000)

    @pytest.mark.parametrize(
        "kwargs,message",
        [
            (dict(r=0.0), "decay rate"),
            (dict(r=1.5), "decay rate"),
            (dict(r=-0.2), "decay rate"),
            (dict(s=0), "decay step"),
            (dict(g=-1), "global step"),
        ],
    )
    def test_validation(self, kwargs, message):
        merged = dict(a0=0.002, r=0.8, s=500, g=0)
        merged.update(kwargs)
        with pytest.raises(ValueError, match=message):
            lr_at_step(**merged)


class TestTrainConfig:
    def test_defaults(self):
        config = TrainConfig()
        assert config.initial_lr == 0.002
        assert config.decay_rate == 0.8
        assert config.decay_step == 500
        assert config.momentum == 0.9

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(decay_rate=0.0),
            dict(decay_rate=2.0),
            dict(decay_step=0),
            dict(batch_size=0),
            dict(max_steps=0),
            dict(eval_every=0),
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    @pytest.mark.parametrize(
        "kind,lr,batch",
        [
            ("expression", 0.002, 28),
            ("cnn", 0.002, 28),
            ("vggnet", 0.001, 28),
            ("engagement", 0.002, 32),
        ],
    )
    def test_per_model_defaults(self, kind, lr, batch):
        config = default_train_config(kind)
        assert config.initial_lr == lr
        assert config.batch_size == batch
        assert config.augment_params == AugmentParams()
        assert config.momentum == 0.9

    def test_unknown_model_kind(self):
        with pytest.raises(ValueError, match="model kind"):
            default_train_config("transformer")

    def test_to_json_serializable(self):
        payload = default_train_config("cnn").to_json()
        json.dumps(payload)
        assert payload["augment_params"]["crop_pad"] == AugmentParams().crop_pad


class TestConfigFile:
    def test_parses_keys_and_comments(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text(
            "# comment line\n"
            "initial_lr = 0.01  # trailing comment\n"
            "batch_size = 16\n"
            "\n"
            "literal_decay = true\n"
        )
        config = load_train_config(path)
        assert config.initial_lr == 0.01
        assert config.batch_size == 16
        assert config.literal_decay is True
        assert config.decay_rate == 0.8

    def test_augmentation_keys(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text("augment_max_rotation_deg = 5\naugment_crop_pad = 2\n")
        config = load_train_config(path, base=default_train_config("cnn"))
        assert config.augment_params == AugmentParams(max_rotation_deg=5.0, crop_pad=2)

    def test_augment_off(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text("augment = false\n")
        assert load_train_config(path, base=default_train_config("cnn")).augment_params is None

    def test_augment_on_from_plain_base(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text("augment = true\n")
        assert load_train_config(path).augment_params == AugmentParams()

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text("warmup_steps = 100\n")
        with pytest.raises(ValueError, match="unknown config key"):
            load_train_config(path)

    def test_line_without_equals(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text("just some words\n")
        with pytest.raises(ValueError, match="key = value"):
            load_train_config(path)

    def test_base_not_mutated(self, tmp_path):
        base = default_train_config("cnn")
        path = tmp_path / "train.cfg"
        path.write_text("initial_lr = 0.5\n")
        load_train_config(path, base=base)
        assert base.initial_lr == 0.002


class TestBatchPlan:
    def test_covers_every_index_per_epoch(self):
        plan = _batches(n=10, batch_size=4, seed=0, max_steps=3)
        seen = np.concatenate(plan)
        assert sorted(seen) == list(range(10))

    def test_partial_batch_kept(self):
        plan = _batches(n=10, batch_size=4, seed=0, max_steps=3)
        assert [len(b) for b in plan] == [4, 4, 2]

    def test_epochs_reshuffle(self):
        plan = _batches(n=8, batch_size=8, seed=0, max_steps=2)
        assert not np.array_equal(plan[0], plan[1])
        assert sorted(plan[0]) == sorted(plan[1])

    def test_deterministic(self):
        a = _batches(n=50, batch_size=7, seed=3, max_steps=20)
        b = _batches(n=50, batch_size=7, seed=3, max_steps=20)
        for left, right in zip(a, b):
            np.testing.assert_array_equal(left, right)

    def test_seed_changes_order(self):
        a = _batches(n=50, batch_size=7, seed=3, max_steps=1)
        b = _batches(n=50, batch_size=7, seed=4, max_steps=1)
        assert not np.array_equal(a[0], b[0])

    def test_exact_step_count(self):
        assert len(_batches(n=5, batch_size=2, seed=0, max_steps=11)) == 11


class TestSgdSemantics:
    def test_plain_sgd_step_on_quadratic(self):
        # loss = 0.5 * w^2, gradient w; one step moves w by -lr * w.
        w = torch.nn.Parameter(torch.tensor([3.0]))
        optimizer = torch.optim.SGD([w], lr=0.1, momentum=0.0)
        (0.5 * w**2).sum().backward()
        optimizer.step()
        assert w.item() == pytest.approx(3.0 - 0.1 * 3.0, abs=1e-6)

    def test_momentum_accumulates_velocity(self):
        # Constant gradient 1: velocities 1, 1.9, 2.71 under momentum 0.9.
        w = torch.nn.Parameter(torch.tensor([0.0]))
        optimizer = torch.optim.SGD([w], lr=1.0, momentum=0.9)
        positions = []
        for _ in range(3):
            optimizer.zero_grad()
            w.grad = torch.tensor([1.0])
            optimizer.step()
            positions.append(w.item())
        assert positions[0] == pytest.approx(-1.0, abs=1e-6)
        assert positions[1] == pytest.approx(-1.0 - 1.9, abs=1e-6)
        assert positions[2] == pytest.approx(-1.0 - 1.9 - 2.71, abs=1e-6)


def toy_run_config(**overrides):
    base = dict(
        initial_lr=0.01,
        batch_size=10,
        max_steps=60,
        eval_every=20,
        seed=5,
        augment_params=None,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def toy_task():
    images, labels = make_separable_classes(num_classes=2, per_class=10, seed=1)
    mean = images.mean()
    scale = images.std() + 1e-9
    images = (images - mean) / scale
    return images, labels


class TestTrainLoop:
    def test_learns_toy_task(self, toy_task):
        images, labels = toy_task
        spec = build_small_cnn(2)
        run = train(spec, init_checkpoint(spec, seed=0), (images, labels), (images, labels), toy_run_config())
        assert run.best_metric >= 0.95
        assert run.history[-1].step == 60
        assert len(run.history) == 60

    def test_bit_for_bit_deterministic(self, toy_task):
        images, labels = toy_task
        spec = build_small_cnn(2)
        runs = [
            train(spec, init_checkpoint(spec, seed=0), (images, labels), (images, labels), toy_run_config())
            for _ in range(2)
        ]
        assert [r.loss for r in runs[0].history] == [r.loss for r in runs[1].history]
        assert runs[0].best_step == runs[1].best_step
        for name in runs[0].best_checkpoint.tensors:
            np.testing.assert_array_equal(
                runs[0].best_checkpoint.tensors[name], runs[1].best_checkpoint.tensors[name]
            )

    def test_history_records_schedule(self, toy_task):
        images, labels = toy_task
        spec = build_small_cnn(2)
        config = toy_run_config(max_steps=4, eval_every=2, decay_rate=0.5, decay_step=2)
        run = train(spec, init_checkpoint(spec, seed=0), (images, labels), (images, labels), config)
        assert [row.lr for row in run.history] == [
            0.01 * 0.5 ** (g / 2) for g in range(4)
        ]
        assert [row.val_accuracy is not None for row in run.history] == [False, True, False, True]

    def test_best_checkpoint_metadata(self, toy_task):
        images, labels = toy_task
        spec = build_small_cnn(2)
        run = train(
            spec,
            init_checkpoint(spec, seed=0),
            (images, labels),
            (images, labels),
            toy_run_config(),
            extra_tensors={"pixel_stats/mean": np.zeros((48, 48))},
        )
        meta = run.best_checkpoint.metadata
        assert meta["num_classes"] == 2
        assert meta["step"] == run.best_step
        assert meta["validation_metric"] == run.best_metric
        assert run.best_checkpoint.tensors["pixel_stats/mean"].dtype == np.float32
        assert "pixel_stats/mean" not in run.best_checkpoint.model_tensors()

    def test_divergence_raises(self, toy_task):
        images, labels = toy_task
        spec = build_small_cnn(2)
        config = toy_run_config(initial_lr=1e8, max_steps=30, eval_every=30)
        with pytest.raises(TrainingDivergedError) as excinfo:
            train(spec, init_checkpoint(spec, seed=0), (images, labels), (images, labels), config)
        assert excinfo.value.step >= 0
        assert not math.isfinite(excinfo.value.loss)

    def test_empty_sets_rejected(self, toy_task):
        images, labels = toy_task
        spec = build_small_cnn(2)
        empty = (np.zeros((0, 48, 48)), np.zeros(0, dtype=np.int64))
        with pytest.raises(ValueError, match="non-empty"):
            train(spec, init_checkpoint(spec), empty, (images, labels), toy_run_config())
        with pytest.raises(ValueError, match="non-empty"):
            train(spec, init_checkpoint(spec), (images, labels), empty, toy_run_config())

    def test_length_mismatch_rejected(self, toy_task):
        images, labels = toy_task
        spec = build_small_cnn(2)
        with pytest.raises(ValueError, match="equal length"):
            train(spec, init_checkpoint(spec), (images, labels[:-1]), (images, labels), toy_run_config())

    def test_augmentation_changes_trajectory(self, toy_task):
        images, labels = toy_task
        spec = build_small_cnn(2)
        plain = train(
            spec, init_checkpoint(spec, seed=0), (images, labels), (images, labels),
            toy_run_config(max_steps=6, eval_every=6),
        )
        augmented = train(
            spec, init_checkpoint(spec, seed=0), (images, labels), (images, labels),
            toy_run_config(max_steps=6, eval_every=6, augment_params=AugmentParams()),
        )
        assert [r.loss for r in plain.history] != [r.loss for r in augmented.history]

    def test_write_train_log(self, toy_task, tmp_path):
        images, labels = toy_task
        spec = build_small_cnn(2)
        run = train(
            spec, init_checkpoint(spec, seed=0), (images, labels), (images, labels),
            toy_run_config(max_steps=4, eval_every=2),
        )
        path = tmp_path / "train.log.jsonl"
        write_train_log(run, path)
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert [row["step"] for row in rows] == [1, 2, 3, 4]
        assert "val_acc" in rows[1] and "val_acc" not in rows[0]
