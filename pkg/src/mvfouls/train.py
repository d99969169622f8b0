"""Training loop: Adam with exponential lr decay, batched cross-entropy.

Actions are the batching unit (each carries a variable number of
views). Every randomized choice derives from (config.seed, epoch), so a
given (model seed, manifest, config) reproduces the final parameters
bitwise. Clips are resampled to 16 frames around the contact point
before encoding; the fps knob widens or narrows that temporal window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce as functools_reduce
from typing import Callable, Sequence

import numpy as np

from .data import (
    FoulAction,
    Manifest,
    Split,
    Task1Label,
    Task2Label,
    actions_in_split,
    map_task1,
    map_task2,
    read_frame_payload,
)
from .errors import ConfigError, ContractError
from .model import FOUL_TASK, OFFENCE_TASK, MvfModel, forward_logits
from .tensor import Parameter, Tape, Tensor, add, scale, softmax_cross_entropy

VALID_FPS = (5, 8, 12, 16)
RESAMPLED_FRAMES = 16


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    lr_decay_per_epoch: float = 0.95
    batch_size: int = 8
    max_epochs: int = 10
    alpha_foul: float = 1.0
    alpha_off: float = 1.0
    seed: int = 0
    class_weighting: bool = False

    def validate(self) -> None:
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ConfigError(f"lr_decay_per_epoch must be in (0,1], got {self.lr_decay_per_epoch}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.alpha_foul < 0 or self.alpha_off < 0:
            raise ConfigError("task weights must be >= 0")


def epoch_lr(config: TrainConfig, epoch: int) -> float:
    return config.lr0 * config.lr_decay_per_epoch**epoch


@dataclass
class OptimState:
    """Adam moments per parameter name plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: Sequence[Parameter]) -> "OptimState":
        return OptimState(
            m={p.name: np.zeros(p.tensor.shape) for p in params},
            v={p.name: np.zeros(p.tensor.shape) for p in params},
        )


def collect_grads(params: Sequence[Parameter]) -> dict[str, np.ndarray]:
    return {p.name: p.tensor.grad for p in params}


def adam_step(
    params: Sequence[Parameter],
    grads: dict[str, np.ndarray],
    state: OptimState,
    lr: float,
) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for p in sorted(params, key=lambda p: p.name):
        g = grads.get(p.name)
        if g is None:
            raise ContractError(f"adam_step: no gradient for parameter {p.name!r}")
        m = state.m[p.name] = state.beta1 * state.m[p.name] + (1.0 - state.beta1) * g
        v = state.v[p.name] = state.beta2 * state.v[p.name] + (1.0 - state.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ------------------------------------------------------- frame resampling

def resample_indices(frame_count: int, contact_frame: int | None, fps_target: int) -> list[int]:
    """16 source indices: 8 before and 8 after the contact, stride 16/fps.

    Indices clamp to the clip bounds, so the result is always 16
    non-decreasing valid positions.
    """
    if fps_target not in VALID_FPS:
        raise ConfigError(f"fps_target must be one of {VALID_FPS}, got {fps_target}")
    if frame_count < 1:
        raise ConfigError(f"frame_count must be >= 1, got {frame_count}")
    anchor = frame_count // 2 if contact_frame is None else contact_frame
    stride = 16.0 / fps_target
    out = []
    for k in range(RESAMPLED_FRAMES):
        pos = math.floor(anchor + (k - 8) * stride + 0.5)  # round half-up
        out.append(min(max(pos, 0), frame_count - 1))
    return out


def resample_frames(clip: np.ndarray, contact_frame: int | None, fps_target: int) -> np.ndarray:
    """Pick 16 frames of a [F x H x W] clip around the contact point."""
    idx = resample_indices(clip.shape[0], contact_frame, fps_target)
    return clip[idx]


def prepare_views(manifest: Manifest, action: FoulAction, fps: int = 16) -> list[np.ndarray]:
    """Load and resample every clip of an action, live view first."""
    views = []
    for clip in action.clips:
        frames = read_frame_payload(manifest.payload_file(clip))
        views.append(resample_frames(frames, clip.contact_frame, fps))
    return views


# ---------------------------------------------------------------- history

@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_task_loss: dict[str, float]
    valid_loss: float | None
    valid_acc: dict[str, float] | None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "lr": self.lr,
            "train_loss": self.train_loss,
            "train_task_loss": self.train_task_loss,
            "valid_loss": self.valid_loss,
            "valid_acc": self.valid_acc,
        }


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int | None = None

    def to_dict(self) -> dict:
        return {"best_epoch": self.best_epoch, "epochs": [e.to_dict() for e in self.epochs]}


# ---------------------------------------------------------------- filters

def action_labels(action: FoulAction, tasks: Sequence[str]) -> dict[str, int] | None:
    """Class index per active task, or None when any task can't be mapped."""
    if action.annotation is None:
        return None
    out = {}
    for task in tasks:
        if task == FOUL_TASK:
            label = map_task1(action.annotation)
            out[task] = None if label is None else list(Task1Label).index(label)
        else:
            label = map_task2(action.annotation)
            out[task] = None if label is None else list(Task2Label).index(label)
    if any(v is None for v in out.values()):
        return None
    return out


def mappable_actions(
    manifest: Manifest, split: Split, tasks: Sequence[str]
) -> list[tuple[FoulAction, dict[str, int]]]:
    out = []
    for action in actions_in_split(manifest, split):
        labels = action_labels(action, tasks)
        if labels is not None:
            out.append((action, labels))
    return out


# ------------------------------------------------------------------ train

def _task_alpha(config: TrainConfig, task: str) -> float:
    return config.alpha_foul if task == FOUL_TASK else config.alpha_off


def _class_weights(
    rows: Sequence[tuple[FoulAction, dict[str, int]]], tasks: Sequence[str]
) -> dict[str, dict[int, float]]:
    """Inverse-frequency weights, normalized to mean 1 over samples."""
    out: dict[str, dict[int, float]] = {}
    for task in tasks:
        counts: dict[int, int] = {}
        for _, labels in rows:
            counts[labels[task]] = counts.get(labels[task], 0) + 1
        n, k = len(rows), len(counts)
        out[task] = {cls: n / (k * c) for cls, c in counts.items()}
    return out


def train(
    model: MvfModel,
    manifest: Manifest,
    config: TrainConfig,
    fps: int = 16,
    on_epoch_end: Callable[[int, MvfModel, EpochStats], None] | None = None,
    log: Callable[[str], None] | None = None,
) -> tuple[MvfModel, TrainHistory]:
    """Optimize in place; returns the model at its best-valid-loss epoch.

    Without a Valid split the final-epoch parameters are kept. Batches
    are reshuffled per epoch from (config.seed, epoch).
    """
    config.validate()
    tasks = model.config.tasks()
    train_rows = mappable_actions(manifest, Split.TRAIN, tasks)
    if not train_rows:
        raise ConfigError("train: no mappable actions in the Train split")
    valid_rows = mappable_actions(manifest, Split.VALID, tasks)

    cache: dict[str, list[np.ndarray]] = {}
    for action, _ in train_rows + valid_rows:
        cache[action.action_id] = prepare_views(manifest, action, fps)

    weights = _class_weights(train_rows, tasks) if config.class_weighting else None
    state = OptimState.for_params(model.parameters())
    history = TrainHistory()
    best_loss = math.inf
    best_state: dict[str, np.ndarray] | None = None

    for epoch in range(config.max_epochs):
        lr = epoch_lr(config, epoch)
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, epoch)))
        order = rng.permutation(len(train_rows))

        epoch_loss = 0.0
        task_loss = dict.fromkeys(tasks, 0.0)
        for start in range(0, len(order), config.batch_size):
            batch = [train_rows[i] for i in order[start : start + config.batch_size]]
            with Tape() as tape:
                losses = []
                for action, labels in batch:
                    clips = [Tensor(v) for v in cache[action.action_id]]
                    logits = forward_logits(model, clips)
                    parts = []
                    for task in tasks:
                        ce = softmax_cross_entropy(logits[task], [labels[task]])
                        task_loss[task] += ce.item()
                        coeff = _task_alpha(config, task)
                        if weights is not None:
                            coeff *= weights[task][labels[task]]
                        parts.append(scale(ce, coeff))
                    action_loss = functools_reduce(add, parts)
                    epoch_loss += action_loss.item()
                    losses.append(action_loss)
                total = scale(functools_reduce(add, losses), 1.0 / len(batch))
                tape.backward(total)
            adam_step(model.parameters(), collect_grads(model.parameters()), state, lr)
            model.zero_grads()

        n = len(train_rows)
        entry = EpochStats(
            epoch=epoch,
            lr=lr,
            train_loss=epoch_loss / n,
            train_task_loss={t: task_loss[t] / n for t in tasks},
            valid_loss=None,
            valid_acc=None,
        )

        if valid_rows:
            v_loss, v_acc = _validate(model, valid_rows, cache, config)
            entry.valid_loss = v_loss
            entry.valid_acc = v_acc
            if v_loss < best_loss:
                best_loss = v_loss
                best_state = {k: v.copy() for k, v in
                              ((p.name, p.tensor.data) for p in model.parameters())}
                history.best_epoch = epoch

        history.epochs.append(entry)
        if log is not None:
            acc = "" if entry.valid_acc is None else " valid_acc=" + ",".join(
                f"{t}:{a:.3f}" for t, a in entry.valid_acc.items()
            )
            vloss = "" if entry.valid_loss is None else f" valid_loss={entry.valid_loss:.4f}"
            log(f"epoch {epoch}: lr={lr:.3e} train_loss={entry.train_loss:.4f}{vloss}{acc}")
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, entry)

    if best_state is not None:
        for p in model.parameters():
            p.tensor.data = best_state[p.name].copy()
    return model, history


def _validate(model, rows, cache, config) -> tuple[float, dict[str, float]]:
    tasks = model.config.tasks()
    total = 0.0
    correct = dict.fromkeys(tasks, 0)
    for action, labels in rows:
        clips = [Tensor(v) for v in cache[action.action_id]]
        logits = forward_logits(model, clips)
        for task in tasks:
            ce = softmax_cross_entropy(logits[task], [labels[task]])
            total += _task_alpha(config, task) * ce.item()
            if int(np.argmax(logits[task].data[0])) == labels[task]:
                correct[task] += 1
    n = len(rows)
    return total / n, {t: correct[t] / n for t in tasks}
