"""Metrics and ablation harnesses.

Evaluation is per task: an action enters a task's confusion matrix
whenever that task's label is mappable, and is counted as excluded
otherwise (Between, borderline severities, DontKnow). Two harnesses
probe the design: masking view subsets on a fixed model, and training
one model per temporal-context setting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import FoulAction, CameraKind, Manifest, Split, actions_in_split
from .errors import ConfigError, DomainError
from .model import (
    FOUL_TASK,
    TASK_CLASS_NAMES,
    ModelConfig,
    MvfModel,
    init_model,
    predict,
)
from .tensor import Tensor
from .text import format_table
from .train import TrainConfig, action_labels, prepare_views, train

DEFAULT_VIEW_SUBSETS = (("L",), ("R1",), ("L", "R1"), ("R1", "R2"), ("L", "R1", "R2"))
DEFAULT_FPS_LIST = (5, 8, 12, 16)


class ConfusionMatrix:
    """Counts[truth][prediction] over one task's classes."""

    def __init__(self, class_names: Sequence[str]):
        self.class_names = list(class_names)
        n = len(self.class_names)
        self.counts = np.zeros((n, n), dtype=np.int64)

    def add(self, truth: int, prediction: int) -> None:
        self.counts[truth, prediction] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        if self.total == 0:
            raise DomainError("confusion matrix is empty")
        return float(np.trace(self.counts)) / self.total

    def recalls(self) -> list[float | None]:
        """Per-class recall; None for classes absent from the ground truth."""
        out = []
        for i in range(len(self.class_names)):
            row = self.counts[i].sum()
            out.append(None if row == 0 else float(self.counts[i, i]) / row)
        return out

    def precisions(self) -> list[float | None]:
        out = []
        for j in range(len(self.class_names)):
            col = self.counts[:, j].sum()
            out.append(None if col == 0 else float(self.counts[j, j]) / col)
        return out

    def to_csv(self) -> str:
        """Matrix plus a recall column (R) and a precision row (P)."""
        def cell(v):
            return "" if v is None else f"{v:.4f}"

        lines = ["truth\\pred," + ",".join(self.class_names) + ",R"]
        for i, name in enumerate(self.class_names):
            row = ",".join(str(c) for c in self.counts[i])
            lines.append(f"{name},{row},{cell(self.recalls()[i])}")
        lines.append("P," + ",".join(cell(p) for p in self.precisions()) + ",")
        return "\n".join(lines) + "\n"

    def render_text(self) -> str:
        headers = ["truth\\pred"] + self.class_names + ["R"]
        rows = []
        recalls = self.recalls()
        for i, name in enumerate(self.class_names):
            rows.append(
                [name]
                + [str(c) for c in self.counts[i]]
                + ["" if recalls[i] is None else f"{recalls[i]:.2f}"]
            )
        rows.append(
            ["P"]
            + ["" if p is None else f"{p:.2f}" for p in self.precisions()]
            + [""]
        )
        return format_table(headers, rows)


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    """Mean per-class recall over classes present in the ground truth."""
    recalls = [r for r in cm.recalls() if r is not None]
    if not recalls:
        raise DomainError("balanced_accuracy: no class has ground-truth samples")
    return sum(recalls) / len(recalls)


def topk_accuracy(predictions: Sequence[np.ndarray], labels: Sequence[int], k: int) -> float:
    """Fraction whose label ranks among the k most confident classes."""
    if k < 1:
        raise ConfigError(f"topk_accuracy: k must be >= 1, got {k}")
    if len(predictions) != len(labels):
        raise ConfigError(
            f"topk_accuracy: {len(predictions)} predictions vs {len(labels)} labels"
        )
    if not predictions:
        raise DomainError("topk_accuracy: empty prediction set")
    hits = 0
    for probs, label in zip(predictions, labels):
        order = np.argsort(-np.asarray(probs), kind="stable")  # ties -> lowest index
        if label in order[:k]:
            hits += 1
    return hits / len(predictions)


@dataclass
class TaskMetrics:
    task: str
    evaluated: int
    excluded: int
    acc1: float
    acc2: float
    balanced_accuracy: float
    ba_excluded_classes: list[str]
    confusion: ConfusionMatrix

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "evaluated": self.evaluated,
            "excluded": self.excluded,
            "acc1": self.acc1,
            "acc2": self.acc2,
            "balanced_accuracy": self.balanced_accuracy,
            "ba_excluded_classes": self.ba_excluded_classes,
            "per_class_recall": {
                name: r
                for name, r in zip(self.confusion.class_names, self.confusion.recalls())
            },
            "per_class_precision": {
                name: p
                for name, p in zip(self.confusion.class_names, self.confusion.precisions())
            },
        }


@dataclass
class MetricsReport:
    split: str
    tasks: dict[str, TaskMetrics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"split": self.split, "tasks": {t: m.to_dict() for t, m in self.tasks.items()}}

    def render_text(self) -> str:
        headers = ["task", "evaluated", "excluded", "acc@1", "acc@2", "BA"]
        rows = [
            [
                m.task,
                str(m.evaluated),
                str(m.excluded),
                f"{m.acc1:.4f}",
                f"{m.acc2:.4f}",
                f"{m.balanced_accuracy:.4f}",
            ]
            for m in self.tasks.values()
        ]
        parts = [format_table(headers, rows)]
        for m in self.tasks.values():
            parts.append("")
            parts.append(f"[{m.task}]")
            parts.append(m.confusion.render_text())
        return "\n".join(parts) + "\n"


ViewFilter = Callable[[FoulAction, list[np.ndarray]], "list[np.ndarray] | None"]


def _evaluate_actions(
    model: MvfModel,
    manifest: Manifest,
    actions: Sequence[FoulAction],
    split_name: str,
    fps: int,
    view_filter: ViewFilter | None = None,
) -> MetricsReport:
    tasks = model.config.tasks()
    collected: dict[str, list[tuple[np.ndarray, int]]] = {t: [] for t in tasks}
    excluded = dict.fromkeys(tasks, 0)

    for action in actions:
        views = prepare_views(manifest, action, fps)
        if view_filter is not None:
            views = view_filter(action, views)
            if views is None:
                continue
        pred = predict(model, [Tensor(v) for v in views])
        for task in tasks:
            labels = action_labels(action, [task])
            if labels is None:
                excluded[task] += 1
            else:
                collected[task].append((pred.probs[task], labels[task]))

    report = MetricsReport(split=split_name)
    for task in tasks:
        rows = collected[task]
        if not rows:
            raise DomainError(
                f"evaluate: no action in split {split_name!r} is mappable for task {task!r}"
            )
        cm = ConfusionMatrix(TASK_CLASS_NAMES[task])
        probs_list, labels_list = [], []
        for probs, label in rows:
            cm.add(label, int(np.argmax(probs)))
            probs_list.append(probs)
            labels_list.append(label)
        recalls = cm.recalls()
        report.tasks[task] = TaskMetrics(
            task=task,
            evaluated=len(rows),
            excluded=excluded[task],
            acc1=cm.accuracy(),
            acc2=topk_accuracy(probs_list, labels_list, 2),
            balanced_accuracy=balanced_accuracy(cm),
            ba_excluded_classes=[
                name for name, r in zip(cm.class_names, recalls) if r is None
            ],
            confusion=cm,
        )
    return report


def evaluate(model: MvfModel, manifest: Manifest, split: Split, fps: int = 16) -> MetricsReport:
    """Deterministic metrics over one split; pure with respect to the model."""
    actions = actions_in_split(manifest, split)
    if not actions:
        raise DomainError(f"evaluate: split {split.value!r} is empty")
    return _evaluate_actions(model, manifest, actions, split.value, fps)


# ---------------------------------------------------------- view ablation

def _role_indices(action: FoulAction) -> dict[str, int]:
    roles = {}
    replay_no = 0
    for i, clip in enumerate(action.clips):
        if clip.camera_kind is CameraKind.LIVE:
            roles["L"] = i
        else:
            replay_no += 1
            roles[f"R{replay_no}"] = i
    return roles


def ablate_views(
    model: MvfModel,
    manifest: Manifest,
    subsets: Sequence[Sequence[str]] = DEFAULT_VIEW_SUBSETS,
    split: Split = Split.TEST,
    fps: int = 16,
) -> list[tuple[str, MetricsReport]]:
    """Evaluate one fixed model with views masked to each subset.

    Only actions carrying every role any subset mentions participate,
    so all subsets are measured on the same action population.
    """
    if not subsets or any(not s for s in subsets):
        raise ConfigError("ablate_views: subsets must be non-empty")
    known = {"L", "R1", "R2", "R3"}
    required: set[str] = set()
    for subset in subsets:
        bad = set(subset) - known
        if bad:
            raise ConfigError(f"ablate_views: unknown view roles {sorted(bad)}")
        required |= set(subset)

    actions = [
        a
        for a in actions_in_split(manifest, split)
        if required <= set(_role_indices(a))
    ]
    if not actions:
        raise DomainError(
            f"ablate_views: no action in split {split.value!r} has views {sorted(required)}"
        )

    results = []
    for subset in subsets:
        wanted = list(subset)

        def view_filter(action: FoulAction, views: list[np.ndarray], _w=wanted):
            roles = _role_indices(action)
            return [views[roles[r]] for r in _w]

        name = "+".join(subset)
        results.append(
            (name, _evaluate_actions(model, manifest, actions, split.value, fps, view_filter))
        )
    return results


def render_views_table(results: Sequence[tuple[str, MetricsReport]]) -> str:
    tasks = list(results[0][1].tasks)
    headers = ["views"]
    for task in tasks:
        headers += [f"{task} acc@1", f"{task} acc@2", f"{task} BA"]
    rows = []
    for name, report in results:
        row = [name]
        for task in tasks:
            m = report.tasks[task]
            row += [f"{m.acc1:.4f}", f"{m.acc2:.4f}", f"{m.balanced_accuracy:.4f}"]
        rows.append(row)
    return format_table(headers, rows)


# ------------------------------------------------------ temporal ablation

@dataclass
class TemporalResult:
    fps: int
    context_seconds: float  # 16 frames / fps
    report: MetricsReport
    model: MvfModel


def ablate_temporal(
    manifest: Manifest,
    model_config: ModelConfig,
    train_config: TrainConfig,
    fps_list: Sequence[int] = DEFAULT_FPS_LIST,
    model_seed: int = 0,
    split: Split = Split.TEST,
    log: Callable[[str], None] | None = None,
) -> list[TemporalResult]:
    """Train and evaluate one model per temporal-context setting."""
    if not fps_list:
        raise ConfigError("ablate_temporal: empty fps list")
    results = []
    for fps in fps_list:
        if log is not None:
            log(f"temporal ablation: fps={fps} ({16 / fps:.1f}s context)")
        model = init_model(model_config, model_seed)
        model, _ = train(model, manifest, train_config, fps=fps, log=log)
        report = evaluate(model, manifest, split, fps=fps)
        results.append(
            TemporalResult(fps=fps, context_seconds=16.0 / fps, report=report, model=model)
        )
    return results


def render_temporal_table(results: Sequence[TemporalResult]) -> str:
    headers = ["fps"] + [str(r.fps) for r in results]
    rows = [["context s"] + [f"{r.context_seconds:.1f}" for r in results]]
    for task in results[0].report.tasks:
        rows.append(
            [f"{task} acc@1"] + [f"{r.report.tasks[task].acc1:.4f}" for r in results]
        )
        rows.append(
            [f"{task} BA"]
            + [f"{r.report.tasks[task].balanced_accuracy:.4f}" for r in results]
        )
    return format_table(headers, rows)
