"""SGD training loop: momentum, exponential LR decay, best-on-validation.

The learning rate decays continuously as a0 * r^(g/s) in the global step g.
A literal compounding variant (each step multiplies the previous rate by
r^(g/s)) is kept behind a config flag for comparison; it shrinks the rate
much faster and is not the default.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint  # noqa: F401 - re-export
from .models.cnn import ModelSpec, instantiate, load_into_module, state_from_module
from .preprocessing import AugmentParams, augment


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the step and learning rate."""

    def __init__(self, step: int, loss: float, lr: float):
        super().__init__(f"non-finite loss {loss} at step {step} (lr={lr:.3g})")
        self.step = step
        self.loss = loss
        self.lr = lr


def lr_at_step(a0: float, r: float, s: int, g: int, literal: bool = False) -> float:
    """Learning rate after g global steps: a0 * r^(g/s) decay.

    ``literal=True`` switches to the compounding recursion
    a_t = a_{t-1} * r^(t/s), whose closed form is a0 * r^(t(t+1)/(2s)).
    """
    if not 0.0 < r <= 1.0:
        raise ValueError(f"decay rate must be in (0, 1], got {r}")
    if s < 1:
        raise ValueError(f"decay step must be >= 1, got {s}")
    if g < 0:
        raise ValueError(f"global step must be >= 0, got {g}")
    if literal:
        return a0 * r ** (g * (g + 1) / (2.0 * s))
    return a0 * r ** (g / s)


@dataclass
class TrainConfig:
    initial_lr: float = 0.002
    decay_rate: float = 0.8
    decay_step: int = 500
    momentum: float = 0.9
    batch_size: int = 28
    max_steps: int = 20_000
    seed: int = 42
    augment_params: AugmentParams | None = None
    eval_every: int = 200
    literal_decay: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.decay_rate <= 1.0:
            raise ValueError(f"decay_rate must be in (0, 1], got {self.decay_rate}")
        if self.decay_step < 1:
            raise ValueError(f"decay_step must be >= 1, got {self.decay_step}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")

    def to_json(self) -> dict:
        payload = dataclasses.asdict(self)
        if self.augment_params is not None:
            payload["augment_params"] = dataclasses.asdict(self.augment_params)
        return payload


def default_train_config(model_kind: str, seed: int = 42) -> TrainConfig:
    """Published per-model settings: lr 0.001 for the scratch deep net,
    0.002 otherwise; batch 32 for the transfer-initialized engagement model,
    28 otherwise."""
    settings = {
        "expression": {"initial_lr": 0.002, "batch_size": 28},
        "cnn": {"initial_lr": 0.002, "batch_size": 28},
        "vggnet": {"initial_lr": 0.001, "batch_size": 28},
        "engagement": {"initial_lr": 0.002, "batch_size": 32},
    }
    if model_kind not in settings:
        raise ValueError(f"unknown model kind {model_kind!r}; expected one of {sorted(settings)}")
    return TrainConfig(seed=seed, augment_params=AugmentParams(), **settings[model_kind])


_CONFIG_FIELD_TYPES = {
    "initial_lr": float,
    "decay_rate": float,
    "decay_step": int,
    "momentum": float,
    "batch_size": int,
    "max_steps": int,
    "seed": int,
    "eval_every": int,
    "literal_decay": lambda v: v.lower() in ("1", "true", "yes"),
    "augment_max_rotation_deg": float,
    "augment_crop_pad": int,
    "augment": lambda v: v.lower() in ("1", "true", "yes"),
}


def load_train_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    """Read ``key = value`` lines into a TrainConfig; '#' starts a comment."""
    values: dict[str, object] = {}
    aug: dict[str, float | int] = {}
    augment_flag: bool | None = None
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_FIELD_TYPES:
            raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
        parsed = _CONFIG_FIELD_TYPES[key](value)
        if key == "augment":
            augment_flag = bool(parsed)
        elif key == "augment_max_rotation_deg":
            aug["max_rotation_deg"] = parsed
        elif key == "augment_crop_pad":
            aug["crop_pad"] = parsed
        else:
            values[key] = parsed
    config = base or TrainConfig()
    merged = dataclasses.replace(config, **values)
    if augment_flag is False:
        merged = dataclasses.replace(merged, augment_params=None)
    elif aug or augment_flag:
        current = merged.augment_params or AugmentParams()
        merged = dataclasses.replace(merged, augment_params=dataclasses.replace(current, **aug))
    return merged


@dataclass(frozen=True)
class TrainLogRow:
    step: int
    loss: float
    lr: float
    val_accuracy: float | None = None


@dataclass
class TrainRun:
    history: list[TrainLogRow]
    best_checkpoint: Checkpoint
    best_step: int
    best_metric: float


def write_train_log(run: TrainRun, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as stream:
        for row in run.history:
            payload = {"step": row.step, "loss": row.loss, "lr": row.lr}
            if row.val_accuracy is not None:
                payload["val_acc"] = row.val_accuracy
            stream.write(json.dumps(payload) + "\n")


def _batches(
    n: int, batch_size: int, seed: int, max_steps: int
) -> "list[np.ndarray]":
    """Deterministic batch index plan: seeded shuffle per epoch, partial kept."""
    plan: list[np.ndarray] = []
    epoch = 0
    while len(plan) < max_steps:
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            plan.append(order[start : start + batch_size])
            if len(plan) == max_steps:
                break
        epoch += 1
    return plan


def _evaluate_accuracy(
    module, images: np.ndarray, labels: np.ndarray, batch_size: int = 256
) -> float:
    module.eval()
    correct = 0
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start : start + batch_size]
            x = torch.as_tensor(chunk[:, None, :, :], dtype=torch.float32)
            predictions = module(x).argmax(dim=1).numpy()
            correct += int((predictions == labels[start : start + batch_size]).sum())
    return correct / len(images)


def train(
    spec: ModelSpec,
    init: Checkpoint,
    train_set: tuple[np.ndarray, np.ndarray],
    valid_set: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    extra_tensors: dict[str, np.ndarray] | None = None,
) -> TrainRun:
    """Minimize cross-entropy with momentum SGD, retaining the best-on-validation
    checkpoint.

    Inputs are already-normalized (N, 48, 48) float grids. Augmentation, when
    configured, applies to training batches only; validation always runs in
    inference mode. The full run is deterministic for a fixed config and seed.
    ``extra_tensors`` (for example pixel statistics) are embedded into every
    snapshot so inference can reproduce preprocessing.
    """
    train_images, train_labels = train_set
    valid_images, valid_labels = valid_set
    if len(train_images) == 0 or len(valid_images) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if len(train_images) != len(train_labels) or len(valid_images) != len(valid_labels):
        raise ValueError("images and labels must have equal length")

    torch.manual_seed(config.seed)
    module = instantiate(spec)
    load_into_module(module, init)
    optimizer = torch.optim.SGD(
        module.parameters(), lr=config.initial_lr, momentum=config.momentum
    )
    aug_rng = np.random.default_rng([config.seed, 1])
    plan = _batches(len(train_images), config.batch_size, config.seed, config.max_steps)

    def snapshot(step: int, metric: float) -> Checkpoint:
        tensors = state_from_module(module)
        for name, tensor in (extra_tensors or {}).items():
            tensors[name] = np.asarray(tensor, dtype=np.float32)
        return Checkpoint(
            tensors=tensors,
            metadata={
                "architecture": spec.to_dict(),
                "num_classes": spec.num_classes,
                "step": step,
                "validation_metric": metric,
            },
        )

    history: list[TrainLogRow] = []
    best_metric = -math.inf
    best_step = 0
    best_checkpoint: Checkpoint | None = None

    for index, batch_indices in enumerate(plan):
        lr = lr_at_step(
            config.initial_lr, config.decay_rate, config.decay_step, index,
            literal=config.literal_decay,
        )
        for group in optimizer.param_groups:
            group["lr"] = lr

        batch = train_images[batch_indices].astype(np.float32)
        if config.augment_params is not None:
            batch = np.stack(
                [augment(grid, aug_rng, config.augment_params) for grid in batch]
            ).astype(np.float32)
        x = torch.as_tensor(batch[:, None, :, :], dtype=torch.float32)
        y = torch.as_tensor(train_labels[batch_indices], dtype=torch.int64)

        module.train()
        optimizer.zero_grad()
        loss = F.cross_entropy(module(x), y)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise TrainingDivergedError(step=index, loss=loss_value, lr=lr)
        loss.backward()
        optimizer.step()

        step = index + 1
        val_accuracy = None
        if step % config.eval_every == 0 or step == len(plan):
            val_accuracy = _evaluate_accuracy(module, valid_images, valid_labels)
            if val_accuracy > best_metric:
                best_metric = val_accuracy
                best_step = step
                best_checkpoint = snapshot(step, val_accuracy)
        history.append(TrainLogRow(step=step, loss=loss_value, lr=lr, val_accuracy=val_accuracy))

    assert best_checkpoint is not None
    return TrainRun(
        history=history,
        best_checkpoint=best_checkpoint,
        best_step=best_step,
        best_metric=best_metric,
    )
