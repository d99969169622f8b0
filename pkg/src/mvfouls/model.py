"""Shared-encoder multi-view classifier.

One encoder E maps each view clip to a feature vector, an order-free
aggregator pools the per-view features, and one or two dense heads
classify the pooled representation (8-way foul class, 4-way offence
severity, or both off a shared encoder).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import TASK1_CLASSES, TASK2_CLASSES
from .errors import CheckpointError, ConfigError, DomainError, ShapeError
from .tensor import (
    Parameter,
    Tensor,
    linear,
    reduce,
    relu,
    reshape,
    softmax,
    stack,
    temporal_conv1d,
)

CHECKPOINT_MAGIC = b"MVFM"
CHECKPOINT_VERSION = 1
CONV_WIDTH = 3

FOUL_TASK = "foul"
OFFENCE_TASK = "offence"

TASK_CLASS_NAMES = {
    FOUL_TASK: [label.value for label in TASK1_CLASSES],
    OFFENCE_TASK: [label.value for label in TASK2_CLASSES],
}


class EncoderKind(str, Enum):
    FRAME_POOL = "FramePool"
    TEMPORAL_CONV = "TemporalConv"


class Aggregation(str, Enum):
    MEAN = "Mean"
    MAX = "Max"


class TaskMode(str, Enum):
    SINGLE_FOUL = "SingleFoul"
    SINGLE_OFFENCE = "SingleOffence"
    MULTI_TASK = "MultiTask"


@dataclass(frozen=True)
class ModelConfig:
    encoder_kind: EncoderKind = EncoderKind.TEMPORAL_CONV
    feature_dim: int = 64
    aggregation: Aggregation = Aggregation.MAX
    task_mode: TaskMode = TaskMode.SINGLE_FOUL
    hidden_dim: int = 64
    frames: int = 16
    height: int = 24
    width: int = 40

    def validate(self) -> None:
        if self.feature_dim < 1 or self.hidden_dim < 1:
            raise ConfigError(
                f"feature_dim and hidden_dim must be >= 1, got {self.feature_dim}, {self.hidden_dim}"
            )
        if self.frames < CONV_WIDTH:
            raise ConfigError(f"frames must be >= {CONV_WIDTH}, got {self.frames}")
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"frame size must be positive, got {self.height}x{self.width}")

    def tasks(self) -> list[str]:
        return {
            TaskMode.SINGLE_FOUL: [FOUL_TASK],
            TaskMode.SINGLE_OFFENCE: [OFFENCE_TASK],
            TaskMode.MULTI_TASK: [FOUL_TASK, OFFENCE_TASK],
        }[self.task_mode]

    def to_dict(self) -> dict:
        return {
            "encoder_kind": self.encoder_kind.value,
            "feature_dim": self.feature_dim,
            "aggregation": self.aggregation.value,
            "task_mode": self.task_mode.value,
            "hidden_dim": self.hidden_dim,
            "frames": self.frames,
            "height": self.height,
            "width": self.width,
        }

    @staticmethod
    def from_dict(obj: dict) -> "ModelConfig":
        try:
            cfg = ModelConfig(
                encoder_kind=EncoderKind(obj["encoder_kind"]),
                feature_dim=int(obj["feature_dim"]),
                aggregation=Aggregation(obj["aggregation"]),
                task_mode=TaskMode(obj["task_mode"]),
                hidden_dim=int(obj["hidden_dim"]),
                frames=int(obj["frames"]),
                height=int(obj["height"]),
                width=int(obj["width"]),
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ConfigError(f"bad model config: {e}") from e
        cfg.validate()
        return cfg


def _layer_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape, the single source of the model's layout."""
    d = config.feature_dim
    pixels = config.height * config.width
    shapes: dict[str, tuple[int, ...]] = {
        "encoder.fc1.weight": (pixels, d),
        "encoder.fc1.bias": (d,),
    }
    if config.encoder_kind is EncoderKind.FRAME_POOL:
        shapes["encoder.fc2.weight"] = (d, d)
        shapes["encoder.fc2.bias"] = (d,)
    else:
        shapes["encoder.conv.kernel"] = (CONV_WIDTH, d, d)
        shapes["encoder.conv.bias"] = (d,)
    heads = {FOUL_TASK: len(TASK1_CLASSES), OFFENCE_TASK: len(TASK2_CLASSES)}
    for task in config.tasks():
        n_cls = heads[task]
        shapes[f"head_{task}.fc1.weight"] = (d, config.hidden_dim)
        shapes[f"head_{task}.fc1.bias"] = (config.hidden_dim,)
        shapes[f"head_{task}.fc2.weight"] = (config.hidden_dim, n_cls)
        shapes[f"head_{task}.fc2.bias"] = (n_cls,)
    return shapes


def _fan_in(shape: tuple[int, ...]) -> int:
    if len(shape) == 1:
        return shape[0]
    if len(shape) == 2:
        return shape[0]
    return shape[0] * shape[1]  # conv kernel [K x C x C']


@dataclass
class MvfModel:
    config: ModelConfig
    params: dict[str, Parameter] = field(default_factory=dict)

    def parameters(self) -> list[Parameter]:
        return [self.params[name] for name in sorted(self.params)]

    def param(self, name: str) -> Tensor:
        return self.params[name].tensor

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.tensor.zero_grad()

    def state_bytes(self) -> dict[str, bytes]:
        return {name: p.tensor.data.tobytes() for name, p in self.params.items()}


def init_model(config: ModelConfig, seed: int) -> MvfModel:
    """Uniform +-1/sqrt(fan_in) init, independently seeded per parameter name.

    Seeding by (seed, crc32(name)) makes a parameter's initial value a
    function of its name alone, so models whose layouts overlap (e.g.
    single-task vs multi-task) start from identical shared weights.
    """
    config.validate()
    params = {}
    for name, shape in _layer_shapes(config).items():
        rng = np.random.default_rng(np.random.SeedSequence((seed, zlib.crc32(name.encode()))))
        bound = 1.0 / np.sqrt(_fan_in(shape))
        values = rng.uniform(-bound, bound, size=shape)
        params[name] = Parameter(name, Tensor(values, requires_grad=True))
    return MvfModel(config=config, params=params)


def encode_view(model: MvfModel, clip: Tensor) -> Tensor:
    """Encode one view clip [T x H x W] into a feature vector [D]."""
    cfg = model.config
    expected = (cfg.frames, cfg.height, cfg.width)
    if clip.shape != expected:
        raise ShapeError(f"encode_view: clip shape {clip.shape}, config expects {expected}")
    x = reshape(clip, (cfg.frames, cfg.height * cfg.width))
    h = relu(linear(x, model.param("encoder.fc1.weight"), model.param("encoder.fc1.bias")))
    if cfg.encoder_kind is EncoderKind.FRAME_POOL:
        frames = linear(h, model.param("encoder.fc2.weight"), model.param("encoder.fc2.bias"))
    else:
        frames = relu(
            temporal_conv1d(
                h, model.param("encoder.conv.kernel"), model.param("encoder.conv.bias")
            )
        )
    return reduce(frames, axis=0, mode="mean")


def aggregate(features: Sequence[Tensor], mode: Aggregation) -> Tensor:
    """Pool per-view feature vectors into one representation."""
    if not features:
        raise DomainError("aggregate: no view features")
    if len(features) == 1:
        return features[0]
    return reduce(stack(list(features)), axis=0, mode="mean" if mode is Aggregation.MEAN else "max")


def head_logits(model: MvfModel, pooled: Tensor, task: str) -> Tensor:
    """Two dense layers over the pooled representation; returns [1 x N]."""
    row = reshape(pooled, (1, pooled.shape[0]))
    h = relu(linear(row, model.param(f"head_{task}.fc1.weight"), model.param(f"head_{task}.fc1.bias")))
    return linear(h, model.param(f"head_{task}.fc2.weight"), model.param(f"head_{task}.fc2.bias"))


def forward_logits(model: MvfModel, clips: Sequence[Tensor]) -> dict[str, Tensor]:
    """Encode all views with the shared encoder and run every active head."""
    if not 1 <= len(clips) <= 4:
        raise ShapeError(f"forward_logits: expected 1..4 views, got {len(clips)}")
    features = [encode_view(model, clip) for clip in clips]
    pooled = aggregate(features, model.config.aggregation)
    return {task: head_logits(model, pooled, task) for task in model.config.tasks()}


@dataclass
class Prediction:
    """Per-task probabilities and the top-2 (label, confidence) pairs."""

    probs: dict[str, np.ndarray]
    top2: dict[str, list[tuple[str, float]]]


def top_k(probs: np.ndarray, class_names: Sequence[str], k: int) -> list[tuple[str, float]]:
    """Highest-confidence classes, ties resolved to the lowest index."""
    order = np.argsort(-probs, kind="stable")
    return [(class_names[i], float(probs[i])) for i in order[:k]]


def predict(model: MvfModel, clips: Sequence[Tensor]) -> Prediction:
    logits = forward_logits(model, clips)
    probs = {task: softmax(t.data.reshape(-1)) for task, t in logits.items()}
    top2 = {task: top_k(p, TASK_CLASS_NAMES[task], 2) for task, p in probs.items()}
    return Prediction(probs=probs, top2=top2)


# ------------------------------------------------------------- checkpoints

def save_model(model: MvfModel, path: str | Path) -> None:
    """Binary checkpoint: config echo plus parameters in name order."""
    config_blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<I", len(config_blob)),
        config_blob,
        struct.pack("<I", len(model.params)),
    ]
    for name in sorted(model.params):
        data = model.params[name].tensor.data
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes, origin: str):
        self.blob = blob
        self.pos = 0
        self.origin = origin

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.origin}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_model(path: str | Path) -> MvfModel:
    path = Path(path)
    reader = _Reader(path.read_bytes(), str(path))
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a model checkpoint")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = ModelConfig.from_dict(json.loads(reader.take(reader.u32()).decode("utf-8")))
    except (json.JSONDecodeError, UnicodeDecodeError, ConfigError) as e:
        raise CheckpointError(f"{path}: bad config block: {e}") from e

    expected = _layer_shapes(config)
    params = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected parameter {name!r}")
        if shape != expected[name]:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {shape}, config implies {expected[name]}"
            )
        count = int(np.prod(shape))
        values = np.frombuffer(reader.take(count * 8), dtype="<f8").reshape(shape)
        params[name] = Parameter(name, Tensor(values.copy(), requires_grad=True))
    if reader.pos != len(reader.blob):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    missing = sorted(set(expected) - set(params))
    if missing:
        raise CheckpointError(f"{path}: missing parameters {missing}")
    return MvfModel(config=config, params=params)
