"""CNN architecture builders, checkpoint init, forward, and transfer.

Two architectures cover all learned models: a small two-conv network and a
deeper four-block net (two 3x3 convs per block, max pool stride 2 after each
block, three fully connected layers on top). The deeper net serves both the
7-class expression task and, via transfer of everything but the output
layer, the binary engagement task.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..checkpoint import Checkpoint, CheckpointError
from ..data import IMAGE_SIZE

HEAD_NAME = "head"


@dataclass(frozen=True)
class LrnParams:
    depth_radius: int = 5
    bias: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75


@dataclass(frozen=True)
class ModelSpec:
    """Declarative architecture description; all tensor shapes derive from it."""

    architecture: str
    num_classes: int
    conv_blocks: tuple[tuple[int, ...], ...]
    hidden_fc: tuple[int, ...]
    kernel_size: int = 3
    conv_dropout: float = 0.25
    fc_dropout: float = 0.5
    lrn_after_layer: str = "conv1"
    lrn: LrnParams = field(default_factory=LrnParams)

    def conv_names(self) -> list[str]:
        count = sum(len(block) for block in self.conv_blocks)
        return [f"conv{i}" for i in range(1, count + 1)]

    def fc_names(self) -> list[str]:
        return [f"fc{i}" for i in range(1, len(self.hidden_fc) + 1)] + [HEAD_NAME]

    def spatial_size(self) -> int:
        size = IMAGE_SIZE
        for _ in self.conv_blocks:
            size //= 2
        return size

    def flattened_size(self) -> int:
        return self.conv_blocks[-1][-1] * self.spatial_size() ** 2

    def with_num_classes(self, num_classes: int) -> "ModelSpec":
        """Same trunk, different output width; the basis for transfer."""
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        return replace(self, num_classes=num_classes)

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "num_classes": self.num_classes,
            "conv_blocks": [list(block) for block in self.conv_blocks],
            "hidden_fc": list(self.hidden_fc),
            "kernel_size": self.kernel_size,
            "conv_dropout": self.conv_dropout,
            "fc_dropout": self.fc_dropout,
            "lrn_after_layer": self.lrn_after_layer,
            "lrn": {
                "depth_radius": self.lrn.depth_radius,
                "bias": self.lrn.bias,
                "alpha": self.lrn.alpha,
                "beta": self.lrn.beta,
            },
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelSpec":
        return cls(
            architecture=payload["architecture"],
            num_classes=payload["num_classes"],
            conv_blocks=tuple(tuple(block) for block in payload["conv_blocks"]),
            hidden_fc=tuple(payload["hidden_fc"]),
            kernel_size=payload["kernel_size"],
            conv_dropout=payload["conv_dropout"],
            fc_dropout=payload["fc_dropout"],
            lrn_after_layer=payload["lrn_after_layer"],
            lrn=LrnParams(**payload["lrn"]),
        )


def build_small_cnn(
    num_classes: int,
    conv_filters: tuple[int, int] = (32, 64),
    fc_width: int = 512,
) -> ModelSpec:
    """Two conv layers (each followed by a stride-2 max pool) and two FC layers.

    ReLU after every conv and hidden FC, dropout after each of those, and
    local response normalization after the first conv only.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    return ModelSpec(
        architecture="small_cnn",
        num_classes=num_classes,
        conv_blocks=((conv_filters[0],), (conv_filters[1],)),
        hidden_fc=(fc_width,),
        lrn_after_layer="conv1",
    )


def build_vgg_variant(
    num_classes: int,
    block_filters: tuple[int, int, int, int] = (64, 128, 256, 512),
    fc_widths: tuple[int, int] = (1024, 1024),
) -> ModelSpec:
    """Four double-conv blocks (eight 3x3 convs total) and three FC layers.

    Max pool stride 2 after each block, local response normalization after
    the first block, ReLU plus dropout after every conv and hidden FC.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    return ModelSpec(
        architecture="vgg_variant",
        num_classes=num_classes,
        conv_blocks=tuple((filters, filters) for filters in block_filters),
        hidden_fc=fc_widths,
        lrn_after_layer="conv2",
    )


def conv_fc_census(spec: ModelSpec) -> tuple[int, int]:
    """(convolutional layer count, fully connected layer count)."""
    return sum(len(block) for block in spec.conv_blocks), len(spec.hidden_fc) + 1


def expected_param_shapes(spec: ModelSpec) -> "OrderedDict[str, tuple[int, ...]]":
    """Tensor name -> shape, derived arithmetically from the spec alone."""
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    in_channels = 1
    index = 0
    for block in spec.conv_blocks:
        for filters in block:
            index += 1
            shapes[f"conv{index}.weight"] = (filters, in_channels, spec.kernel_size, spec.kernel_size)
            shapes[f"conv{index}.bias"] = (filters,)
            in_channels = filters
    in_features = spec.flattened_size()
    for i, width in enumerate(spec.hidden_fc, start=1):
        shapes[f"fc{i}.weight"] = (width, in_features)
        shapes[f"fc{i}.bias"] = (width,)
        in_features = width
    shapes[f"{HEAD_NAME}.weight"] = (spec.num_classes, in_features)
    shapes[f"{HEAD_NAME}.bias"] = (spec.num_classes,)
    return shapes


def param_count(spec: ModelSpec) -> int:
    return sum(int(np.prod(shape)) for shape in expected_param_shapes(spec).values())


class Net(nn.Module):
    """Torch realization of a ModelSpec; parameter names mirror the spec."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        in_channels = 1
        index = 0
        for block in spec.conv_blocks:
            for filters in block:
                index += 1
                pad = spec.kernel_size // 2
                self.add_module(
                    f"conv{index}", nn.Conv2d(in_channels, filters, spec.kernel_size, padding=pad)
                )
                in_channels = filters
        self.lrn = nn.LocalResponseNorm(
            size=2 * spec.lrn.depth_radius + 1,
            alpha=spec.lrn.alpha,
            beta=spec.lrn.beta,
            k=spec.lrn.bias,
        )
        self.conv_drop = nn.Dropout(spec.conv_dropout)
        self.fc_drop = nn.Dropout(spec.fc_dropout)
        in_features = spec.flattened_size()
        for i, width in enumerate(spec.hidden_fc, start=1):
            self.add_module(f"fc{i}", nn.Linear(in_features, width))
            in_features = width
        self.add_module(HEAD_NAME, nn.Linear(in_features, spec.num_classes))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Activations feeding the output layer (post last hidden FC)."""
        index = 0
        for block in self.spec.conv_blocks:
            for _ in block:
                index += 1
                name = f"conv{index}"
                x = F.relu(getattr(self, name)(x))
                if name == self.spec.lrn_after_layer:
                    x = self.lrn(x)
                x = self.conv_drop(x)
            x = F.max_pool2d(x, kernel_size=2, stride=2)
        x = x.flatten(1)
        for i in range(1, len(self.spec.hidden_fc) + 1):
            x = F.relu(getattr(self, f"fc{i}")(x))
            x = self.fc_drop(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return getattr(self, HEAD_NAME)(self.features(x))


def instantiate(spec: ModelSpec) -> Net:
    return Net(spec)


def init_checkpoint(spec: ModelSpec, seed: int = 42) -> Checkpoint:
    """Fresh parameters: fan-in-scaled uniform weights, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, shape in expected_param_shapes(spec).items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return Checkpoint(
        tensors=tensors,
        metadata={
            "architecture": spec.to_dict(),
            "num_classes": spec.num_classes,
            "step": 0,
            "validation_metric": None,
        },
    )


def spec_from_checkpoint(checkpoint: Checkpoint) -> ModelSpec:
    payload = checkpoint.metadata.get("architecture")
    if payload is None:
        raise CheckpointError("checkpoint metadata carries no architecture description")
    return ModelSpec.from_dict(payload)


def load_into_module(module: Net, checkpoint: Checkpoint) -> None:
    """Copy checkpoint tensors into the module, validating names and shapes."""
    expected = expected_param_shapes(module.spec)
    tensors = checkpoint.model_tensors()
    missing = set(expected) - set(tensors)
    extra = set(tensors) - set(expected)
    if missing or extra:
        raise CheckpointError(
            f"tensor names do not match spec (missing={sorted(missing)}, extra={sorted(extra)})"
        )
    state = {}
    for name, shape in expected.items():
        tensor = tensors[name]
        if tensor.shape != shape:
            raise CheckpointError(f"tensor {name!r} has shape {tensor.shape}, spec wants {shape}")
        state[name] = torch.from_numpy(tensor.copy())
    module.load_state_dict(state)


def state_from_module(module: Net) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict(
        (name, parameter.detach().cpu().numpy().astype(np.float32))
        for name, parameter in module.state_dict().items()
    )


def _as_input_batch(batch: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    array = np.asarray(batch)
    if array.ndim == 3:
        array = array[:, None, :, :]
    if array.ndim != 4 or array.shape[1] != 1 or array.shape[2:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"expected (N, 48, 48) or (N, 1, 48, 48) batch, got {array.shape}")
    return torch.as_tensor(np.ascontiguousarray(array), dtype=dtype)


def forward(spec: ModelSpec, checkpoint: Checkpoint, batch: np.ndarray) -> np.ndarray:
    """Inference-mode class probabilities, one row per batch element."""
    module = instantiate(spec)
    load_into_module(module, checkpoint)
    module.eval()
    with torch.no_grad():
        logits = module(_as_input_batch(batch))
        probabilities = torch.softmax(logits, dim=1)
    return probabilities.numpy()


def penultimate_activations(spec: ModelSpec, checkpoint: Checkpoint, batch: np.ndarray) -> np.ndarray:
    module = instantiate(spec)
    load_into_module(module, checkpoint)
    module.eval()
    with torch.no_grad():
        return module.features(_as_input_batch(batch)).numpy()


def transfer_init(
    target: ModelSpec, source: Checkpoint, seed: int = 42
) -> Checkpoint:
    """Initialize a model from a trained one, re-drawing only the output layer.

    Source and target must agree on every layer except the output head; all
    other tensors are copied bit-exactly and stay trainable.
    """
    source_spec = spec_from_checkpoint(source)
    source_dict = source_spec.to_dict()
    target_dict = target.to_dict()
    source_dict.pop("num_classes")
    target_dict.pop("num_classes")
    if source_dict != target_dict:
        raise CheckpointError(
            "source and target architectures differ beyond the output layer"
        )
    expected = expected_param_shapes(target)
    source_tensors = source.model_tensors()
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    rng = np.random.default_rng(seed)
    for name, shape in expected.items():
        if name.startswith(f"{HEAD_NAME}."):
            if name.endswith(".bias"):
                tensors[name] = np.zeros(shape, dtype=np.float32)
            else:
                fan_in = shape[1]
                bound = 1.0 / np.sqrt(fan_in)
                tensors[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            continue
        tensor = source_tensors.get(name)
        if tensor is None or tensor.shape != shape:
            raise CheckpointError(
                f"source tensor {name!r} missing or mismatched for transfer"
            )
        tensors[name] = tensor.copy()
    return Checkpoint(
        tensors=tensors,
        metadata={
            "architecture": target.to_dict(),
            "num_classes": target.num_classes,
            "step": 0,
            "validation_metric": None,
            "initialized_from": {
                "architecture_id": source_spec.architecture,
                "num_classes": source_spec.num_classes,
                "step": source.metadata.get("step"),
            },
        },
    )


def gradient_check(
    spec: ModelSpec,
    batch: np.ndarray,
    labels: Sequence[int],
    seed: int = 0,
    coords_per_tensor: int = 3,
    step: float = 1e-7,
    noise_floor: float = 1e-5,
) -> float:
    """Max relative error between autograd and central-difference gradients.

    Runs in float64 inference mode (dropout off) on the cross-entropy loss,
    probing a few randomly chosen coordinates per parameter tensor. The step
    balances truncation against rounding: larger steps pick up curvature in
    deep nets, smaller ones drown tiny gradients in loss-evaluation noise.
    Coordinates whose gradient magnitude sits under the noise floor cannot be
    compared in relative terms, so the floor caps their contribution.

    Parameters are jittered off the fresh init before checking. Zero biases
    put ReLU pre-activations of all-zero receptive fields exactly at the
    kink, where one-sided analytic and symmetric numeric derivatives differ
    by construction; a random offset restores general position.
    """
    module = instantiate(spec).double()
    load_into_module(module, init_checkpoint(spec, seed=seed))
    module.double()
    module.eval()
    jitter_rng = np.random.default_rng([seed, 1])
    with torch.no_grad():
        for parameter in module.parameters():
            offset = jitter_rng.uniform(-0.05, 0.05, size=tuple(parameter.shape))
            parameter += torch.from_numpy(offset)
    x = _as_input_batch(batch, dtype=torch.float64)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.int64)

    def loss() -> torch.Tensor:
        return F.cross_entropy(module(x), y)

    module.zero_grad()
    loss().backward()
    analytic = {name: p.grad.detach().clone() for name, p in module.named_parameters()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for name, parameter in module.named_parameters():
            flat = parameter.view(-1)
            count = min(coords_per_tensor, flat.numel())
            for index in rng.choice(flat.numel(), size=count, replace=False):
                original = flat[index].item()
                flat[index] = original + step
                upper = loss().item()
                flat[index] = original - step
                lower = loss().item()
                flat[index] = original
                numeric = (upper - lower) / (2.0 * step)
                exact = analytic[name].view(-1)[index].item()
                scale = max(abs(exact), abs(numeric), noise_floor)
                worst = max(worst, abs(exact - numeric) / scale)
    return worst
