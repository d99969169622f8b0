"""Dataset model: annotations, multi-view clip metadata, on-disk formats.

A dataset is a JSON manifest plus one binary frame payload per clip.
Annotations carry ten properties with conditional rules (an upper-body
part is given exactly when the body part is Upper, a handball offence
flag only with a handball). Two classification tasks are derived from
them: the 8-way foul class and the 4-way offence-severity class.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DomainError, FrameFormatError, ManifestError
from .tensor import Tensor
from .text import format_table

MANIFEST_VERSION = 1
FRAME_MAGIC = b"MVFC"
FRAME_VERSION = 1
_FRAME_HEADER = struct.Struct("<4sIIII")  # magic, version, frames, height, width


class Offence(str, Enum):
    OFFENCE = "Offence"
    NO_OFFENCE = "NoOffence"
    BETWEEN = "Between"


class ActionClass(str, Enum):
    STANDING_TACKLING = "StandingTackling"
    TACKLING = "Tackling"
    HIGH_LEG = "HighLeg"
    PUSHING = "Pushing"
    HOLDING = "Holding"
    ELBOWING = "Elbowing"
    CHALLENGE = "Challenge"
    DIVE = "Dive"
    DONT_KNOW = "DontKnow"


class Contact(str, Enum):
    WITH = "With"
    WITHOUT = "Without"


class Bodypart(str, Enum):
    UPPER = "Upper"
    UNDER = "Under"


class UpperBodyPart(str, Enum):
    SHOULDER = "Shoulder"
    ARM = "Arm"
    NOT_APPLICABLE = "NotApplicable"


class YesNo(str, Enum):
    YES = "Yes"
    NO = "No"


class PlayBall(str, Enum):
    YES = "Yes"
    NO = "No"
    MAYBE = "Maybe"


class Handball(str, Enum):
    HANDBALL = "Handball"
    NO_HANDBALL = "NoHandball"


class HandballOffence(str, Enum):
    YES = "Yes"
    NO = "No"
    NOT_APPLICABLE = "NotApplicable"


class CameraKind(str, Enum):
    LIVE = "Live"
    REPLAY = "Replay"


class Split(str, Enum):
    TRAIN = "Train"
    VALID = "Valid"
    TEST = "Test"


class Task1Label(str, Enum):
    STANDING_TACKLING = "StandingTackling"
    TACKLING = "Tackling"
    HIGH_LEG = "HighLeg"
    PUSHING = "Pushing"
    HOLDING = "Holding"
    ELBOWING = "Elbowing"
    CHALLENGE = "Challenge"
    DIVE = "Dive"


class Task2Label(str, Enum):
    NO_OFFENCE = "NoOffence"
    OFFENCE_NO_CARD = "OffenceNoCard"
    OFFENCE_YELLOW = "OffenceYellow"
    OFFENCE_RED = "OffenceRed"


TASK1_CLASSES = list(Task1Label)
TASK2_CLASSES = list(Task2Label)

SEVERITIES = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class Annotation:
    """The ten referee-annotated properties of one foul action."""

    offence: Offence
    action_class: ActionClass
    severity: int
    contact: Contact
    bodypart: Bodypart
    upper_body_part: UpperBodyPart
    try_to_play: YesNo
    play_ball: PlayBall
    handball: Handball
    handball_offence: HandballOffence

    def violations(self) -> list[tuple[str, str]]:
        """(field, message) pairs for every broken rule; empty when valid."""
        out: list[tuple[str, str]] = []
        if self.severity not in SEVERITIES:
            out.append(("severity", f"severity must be 1..5, got {self.severity}"))
        if self.bodypart is Bodypart.UPPER and self.upper_body_part is UpperBodyPart.NOT_APPLICABLE:
            out.append(("upper_body_part", "bodypart=Upper requires an upper body part"))
        if self.bodypart is Bodypart.UNDER and self.upper_body_part is not UpperBodyPart.NOT_APPLICABLE:
            out.append(
                ("upper_body_part", "upper_body_part must be NotApplicable when bodypart=Under")
            )
        if (
            self.handball_offence is not HandballOffence.NOT_APPLICABLE
            and self.handball is not Handball.HANDBALL
        ):
            out.append(
                ("handball_offence", "handball_offence must be NotApplicable without a handball")
            )
        return out


ANNOTATION_FIELDS = {
    "offence": Offence,
    "action_class": ActionClass,
    "severity": None,  # int 1..5, not an enum
    "contact": Contact,
    "bodypart": Bodypart,
    "upper_body_part": UpperBodyPart,
    "try_to_play": YesNo,
    "play_ball": PlayBall,
    "handball": Handball,
    "handball_offence": HandballOffence,
}


@dataclass(frozen=True)
class ClipMeta:
    """One camera view of an action plus its alignment to the live view."""

    clip_id: str
    camera_kind: CameraKind
    frame_count: int
    fps: int
    height: int
    width: int
    offset_frames: int
    replay_speed: float
    contact_frame: int | None
    payload_path: str


@dataclass(frozen=True)
class FoulAction:
    """One incident: 2..4 clips of the same moment plus its annotation.

    annotation is None while an action awaits the annotator; revision
    counts accepted annotation writes (optimistic-concurrency token).
    """

    action_id: str
    clips: tuple[ClipMeta, ...]
    annotation: Annotation | None
    split: Split
    revision: int = 0


@dataclass(frozen=True)
class Manifest:
    format_version: int
    dataset_name: str
    base_dir: str
    actions: tuple[FoulAction, ...]
    manifest_dir: Path = field(default=Path("."), compare=False)

    def payload_file(self, clip: ClipMeta) -> Path:
        return self.manifest_dir / self.base_dir / clip.payload_path

    def action(self, action_id: str) -> FoulAction:
        for a in self.actions:
            if a.action_id == action_id:
                return a
        raise ManifestError(f"action {action_id}: not in manifest")


def actions_in_split(manifest: Manifest, split: Split) -> list[FoulAction]:
    return [a for a in manifest.actions if a.split is split]


# ------------------------------------------------------------- validation

def _check_clip(action_id: str, clip: ClipMeta) -> None:
    ctx = f"action {action_id}, clip {clip.clip_id}"
    if clip.frame_count < 16:
        raise ManifestError(f"{ctx}: frame_count must be >= 16, got {clip.frame_count}")
    if clip.replay_speed <= 0:
        raise ManifestError(f"{ctx}: replay_speed must be > 0, got {clip.replay_speed}")
    if clip.contact_frame is not None and not 0 <= clip.contact_frame < clip.frame_count:
        raise ManifestError(
            f"{ctx}: contact_frame {clip.contact_frame} outside [0, {clip.frame_count})"
        )
    for dim_name, dim in (("height", clip.height), ("width", clip.width), ("fps", clip.fps)):
        if dim <= 0:
            raise ManifestError(f"{ctx}: {dim_name} must be positive, got {dim}")


def _check_action(action: FoulAction) -> None:
    aid = action.action_id
    if not 2 <= len(action.clips) <= 4:
        raise ManifestError(
            f"action {aid}: needs at least two and at most four views, got {len(action.clips)}"
        )
    live_positions = [i for i, c in enumerate(action.clips) if c.camera_kind is CameraKind.LIVE]
    if len(live_positions) > 1:
        raise ManifestError(f"action {aid}: more than one Live clip")
    if live_positions and live_positions[0] != 0:
        raise ManifestError(f"action {aid}: the Live clip must be listed first")
    seen = set()
    for clip in action.clips:
        if clip.clip_id in seen:
            raise ManifestError(f"action {aid}: duplicate clip_id {clip.clip_id}")
        seen.add(clip.clip_id)
        _check_clip(aid, clip)
    if action.revision < 0:
        raise ManifestError(f"action {aid}: revision must be >= 0")
    if action.annotation is not None:
        for fld, msg in action.annotation.violations():
            raise ManifestError(f"action {aid}: {fld}: {msg}")


def validate_manifest(manifest: Manifest, check_payloads: bool = True) -> None:
    seen = set()
    for action in manifest.actions:
        if action.action_id in seen:
            raise ManifestError(f"action {action.action_id}: duplicate action_id")
        seen.add(action.action_id)
        _check_action(action)
        if check_payloads:
            for clip in action.clips:
                path = manifest.payload_file(clip)
                if not path.is_file():
                    raise ManifestError(
                        f"action {action.action_id}, clip {clip.clip_id}: "
                        f"payload not found at {path}"
                    )


# ------------------------------------------------------------ JSON codecs

def _req(obj: dict, key: str, where: str):
    if key not in obj:
        raise ManifestError(f"{where}: missing field {key!r}")
    return obj[key]


def _enum(cls, value, where: str):
    try:
        return cls(value)
    except ValueError:
        valid = ", ".join(m.value for m in cls)
        raise ManifestError(f"{where}: {value!r} not one of [{valid}]") from None


def _int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ManifestError(f"{where}: expected integer, got {value!r}")
    return value


def annotation_from_dict(obj: dict, where: str = "annotation") -> Annotation:
    if not isinstance(obj, dict):
        raise ManifestError(f"{where}: expected object, got {type(obj).__name__}")
    values = {}
    for fld, enum_cls in ANNOTATION_FIELDS.items():
        raw = _req(obj, fld, where)
        if enum_cls is None:
            values[fld] = _int(raw, f"{where}.{fld}")
        else:
            values[fld] = _enum(enum_cls, raw, f"{where}.{fld}")
    extra = set(obj) - set(ANNOTATION_FIELDS)
    if extra:
        raise ManifestError(f"{where}: unknown fields {sorted(extra)}")
    return Annotation(**values)


def annotation_to_dict(a: Annotation) -> dict:
    return {
        fld: (getattr(a, fld) if enum_cls is None else getattr(a, fld).value)
        for fld, enum_cls in ANNOTATION_FIELDS.items()
    }


def _clip_from_dict(obj: dict, where: str) -> ClipMeta:
    contact = _req(obj, "contact_frame", where)
    return ClipMeta(
        clip_id=str(_req(obj, "clip_id", where)),
        camera_kind=_enum(CameraKind, _req(obj, "camera_kind", where), f"{where}.camera_kind"),
        frame_count=_int(_req(obj, "frame_count", where), f"{where}.frame_count"),
        fps=_int(_req(obj, "fps", where), f"{where}.fps"),
        height=_int(_req(obj, "height", where), f"{where}.height"),
        width=_int(_req(obj, "width", where), f"{where}.width"),
        offset_frames=_int(_req(obj, "offset_frames", where), f"{where}.offset_frames"),
        replay_speed=float(_req(obj, "replay_speed", where)),
        contact_frame=None if contact is None else _int(contact, f"{where}.contact_frame"),
        payload_path=str(_req(obj, "payload_path", where)),
    )


def _clip_to_dict(c: ClipMeta) -> dict:
    return {
        "clip_id": c.clip_id,
        "camera_kind": c.camera_kind.value,
        "frame_count": c.frame_count,
        "fps": c.fps,
        "height": c.height,
        "width": c.width,
        "offset_frames": c.offset_frames,
        "replay_speed": c.replay_speed,
        "contact_frame": c.contact_frame,
        "payload_path": c.payload_path,
    }


def _action_from_dict(obj: dict, index: int) -> FoulAction:
    where = f"actions[{index}]"
    aid = str(_req(obj, "action_id", where))
    where = f"action {aid}"
    raw_clips = _req(obj, "clips", where)
    if not isinstance(raw_clips, list):
        raise ManifestError(f"{where}: clips must be a list")
    clips = tuple(
        _clip_from_dict(c, f"{where}, clip[{i}]") for i, c in enumerate(raw_clips)
    )
    raw_ann = _req(obj, "annotation", where)
    annotation = None if raw_ann is None else annotation_from_dict(raw_ann, f"{where}, annotation")
    return FoulAction(
        action_id=aid,
        clips=clips,
        annotation=annotation,
        split=_enum(Split, _req(obj, "split", where), f"{where}.split"),
        revision=_int(obj.get("revision", 0), f"{where}.revision"),
    )


def _action_to_dict(a: FoulAction) -> dict:
    return {
        "action_id": a.action_id,
        "split": a.split.value,
        "revision": a.revision,
        "annotation": None if a.annotation is None else annotation_to_dict(a.annotation),
        "clips": [_clip_to_dict(c) for c in a.clips],
    }


def load_manifest(path: str | Path, check_payloads: bool = True) -> Manifest:
    """Read and fully validate a manifest file."""
    path = Path(path)
    try:
        text_body = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    try:
        obj = json.loads(text_body)
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: parse error at line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(obj, dict):
        raise ManifestError(f"{path}: top level must be an object")
    version = _int(_req(obj, "format_version", "manifest"), "manifest.format_version")
    if version != MANIFEST_VERSION:
        raise ManifestError(f"manifest.format_version: unsupported version {version}")
    raw_actions = _req(obj, "actions", "manifest")
    if not isinstance(raw_actions, list):
        raise ManifestError("manifest.actions: must be a list")
    manifest = Manifest(
        format_version=version,
        dataset_name=str(_req(obj, "dataset_name", "manifest")),
        base_dir=str(obj.get("base_dir", ".")),
        actions=tuple(_action_from_dict(a, i) for i, a in enumerate(raw_actions)),
        manifest_dir=path.parent,
    )
    validate_manifest(manifest, check_payloads=check_payloads)
    return manifest


def manifest_to_dict(m: Manifest) -> dict:
    return {
        "format_version": m.format_version,
        "dataset_name": m.dataset_name,
        "base_dir": m.base_dir,
        "actions": [_action_to_dict(a) for a in m.actions],
    }


def save_manifest(m: Manifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest_to_dict(m), indent=2) + "\n", encoding="utf-8")


# ----------------------------------------------------------- frame payload

def write_clip_frames(path: str | Path, frames: np.ndarray) -> None:
    """Write frames [F x H x W], values in [0,1], as an MVFC payload.

    Storage is 32-bit; callers wanting bit-exact round-trips must pass
    values already on the float32 grid.
    """
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 3:
        raise FrameFormatError(f"frames must be [F x H x W], got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise FrameFormatError("frame values must be finite and within [0, 1]")
    f, h, w = arr.shape
    header = _FRAME_HEADER.pack(FRAME_MAGIC, FRAME_VERSION, f, h, w)
    Path(path).write_bytes(header + arr.astype("<f4").tobytes())


def read_frame_payload(path: str | Path) -> np.ndarray:
    """Read an MVFC payload into a float64 [F x H x W] array."""
    blob = Path(path).read_bytes()
    if len(blob) < _FRAME_HEADER.size:
        raise FrameFormatError(f"{path}: payload shorter than header")
    magic, version, f, h, w = _FRAME_HEADER.unpack_from(blob)
    if magic != FRAME_MAGIC:
        raise FrameFormatError(f"{path}: bad magic {magic!r}, expected {FRAME_MAGIC!r}")
    if version != FRAME_VERSION:
        raise FrameFormatError(f"{path}: unsupported payload version {version}")
    expected = _FRAME_HEADER.size + f * h * w * 4
    if len(blob) != expected:
        raise FrameFormatError(f"{path}: payload is {len(blob)} bytes, header implies {expected}")
    data = np.frombuffer(blob, dtype="<f4", offset=_FRAME_HEADER.size).astype(np.float64)
    arr = data.reshape(f, h, w)
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise FrameFormatError(f"{path}: frame values outside [0, 1]")
    return arr


def load_clip_frames(meta: ClipMeta, root: str | Path = ".") -> Tensor:
    """Load a clip's frames, cross-checking the header against its metadata."""
    path = Path(root) / meta.payload_path
    arr = read_frame_payload(path)
    shape = (meta.frame_count, meta.height, meta.width)
    if arr.shape != shape:
        raise FrameFormatError(
            f"{path}: payload shape {arr.shape} disagrees with manifest {shape}"
        )
    return Tensor(arr)


# ------------------------------------------------------------ task mapping

def map_task1(a: Annotation) -> Task1Label | None:
    """8-way foul class; DontKnow is excluded."""
    if a.action_class is ActionClass.DONT_KNOW:
        return None
    return Task1Label(a.action_class.value)


def map_task2(a: Annotation) -> Task2Label | None:
    """4-way offence severity; Between and borderline severities excluded."""
    if a.offence is Offence.BETWEEN:
        return None
    if a.offence is Offence.NO_OFFENCE:
        return Task2Label.NO_OFFENCE
    return {
        1: Task2Label.OFFENCE_NO_CARD,
        3: Task2Label.OFFENCE_YELLOW,
        5: Task2Label.OFFENCE_RED,
    }.get(a.severity)


# ------------------------------------------------------------------- stats

@dataclass
class StatsReport:
    n_actions: int
    n_annotated: int
    property_percent: dict[str, dict[str, float]]
    mean_clips_per_action: float
    views_histogram: dict[int, int]
    error_rate: float
    severity_by_class: dict[str, dict[int, float]]
    split_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "n_actions": self.n_actions,
            "n_annotated": self.n_annotated,
            "property_percent": self.property_percent,
            "mean_clips_per_action": self.mean_clips_per_action,
            "views_histogram": {str(k): v for k, v in self.views_histogram.items()},
            "error_rate": self.error_rate,
            "severity_by_class": {
                cls: {str(s): frac for s, frac in dist.items()}
                for cls, dist in self.severity_by_class.items()
            },
            "split_counts": self.split_counts,
        }

    def render_text(self) -> str:
        parts = [
            f"actions: {self.n_actions} ({self.n_annotated} annotated)",
            f"mean clips per action: {self.mean_clips_per_action:.2f}",
            "views histogram: "
            + ", ".join(f"{k} views: {v}" for k, v in sorted(self.views_histogram.items())),
            f"referee error rate (NoOffence fraction): {self.error_rate:.3f}",
            "splits: " + ", ".join(f"{k}: {v}" for k, v in sorted(self.split_counts.items())),
            "",
        ]
        for prop, dist in self.property_percent.items():
            rows = [[value, f"{pct:5.1f}"] for value, pct in dist.items()]
            parts.append(format_table([prop, "percent"], rows))
            parts.append("")
        if self.severity_by_class:
            headers = ["class"] + [str(s) for s in SEVERITIES]
            rows = []
            for cls, dist in self.severity_by_class.items():
                rows.append([cls] + [f"{dist.get(s, 0.0):.2f}" for s in SEVERITIES])
            parts.append(format_table(headers, rows))
        return "\n".join(parts).rstrip() + "\n"


def dataset_stats(manifest: Manifest) -> StatsReport:
    """Frequencies over all ten properties plus view and split statistics."""
    if not manifest.actions:
        raise DomainError("dataset_stats: empty manifest")
    annotated = [a for a in manifest.actions if a.annotation is not None]

    property_percent: dict[str, dict[str, float]] = {}
    if annotated:
        n = len(annotated)
        for fld, enum_cls in ANNOTATION_FIELDS.items():
            domain = [str(s) for s in SEVERITIES] if enum_cls is None else [m.value for m in enum_cls]
            counts = dict.fromkeys(domain, 0)
            for a in annotated:
                raw = getattr(a.annotation, fld)
                key = str(raw) if enum_cls is None else raw.value
                counts[key] += 1
            property_percent[fld] = {k: 100.0 * v / n for k, v in counts.items()}

    views_histogram: dict[int, int] = {}
    for a in manifest.actions:
        views_histogram[len(a.clips)] = views_histogram.get(len(a.clips), 0) + 1
    total_clips = sum(len(a.clips) for a in manifest.actions)

    error_rate = (
        sum(1 for a in annotated if a.annotation.offence is Offence.NO_OFFENCE) / len(annotated)
        if annotated
        else math.nan
    )

    severity_by_class: dict[str, dict[int, float]] = {}
    for label in TASK1_CLASSES:
        group = [
            a
            for a in annotated
            if a.annotation.action_class.value == label.value
            and a.annotation.offence is Offence.OFFENCE
        ]
        if not group:
            continue
        dist: dict[int, float] = {}
        for a in group:
            dist[a.annotation.severity] = dist.get(a.annotation.severity, 0) + 1
        severity_by_class[label.value] = {s: c / len(group) for s, c in sorted(dist.items())}

    split_counts: dict[str, int] = {s.value: 0 for s in Split}
    for a in manifest.actions:
        split_counts[a.split.value] += 1

    return StatsReport(
        n_actions=len(manifest.actions),
        n_annotated=len(annotated),
        property_percent=property_percent,
        mean_clips_per_action=total_clips / len(manifest.actions),
        views_histogram=views_histogram,
        error_rate=error_rate,
        severity_by_class=severity_by_class,
        split_counts=split_counts,
    )


# ------------------------------------------------------------------ splits

def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer allocation of n items: floor shares, then largest remainders."""
    base = [int(math.floor(f * n)) for f in fractions]
    residual = [f * n - b for f, b in zip(fractions, base)]
    for _ in range(n - sum(base)):
        i = max(range(len(fractions)), key=lambda j: (residual[j], -j))
        base[i] += 1
        residual[i] = -1.0
    return base


def split_actions(
    manifest: Manifest, seed: int, fractions: Sequence[float] = (0.8, 0.1, 0.1)
) -> Manifest:
    """Assign Train/Valid/Test splits, stratified by the Task 2 label.

    Actions with no Task 2 label (unannotated, Between, borderline
    severity) form their own stratum and get the same proportional
    allocation. Deterministic for a given (manifest, seed).
    """
    fracs = [float(f) for f in fractions]
    if len(fracs) != 3 or any(f < 0 for f in fracs):
        raise ConfigError(f"fractions must be three non-negative values, got {fractions}")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fracs)}")

    strata: dict[str, list[FoulAction]] = {}
    for action in manifest.actions:
        label = None if action.annotation is None else map_task2(action.annotation)
        key = "unmappable" if label is None else label.value
        strata.setdefault(key, []).append(action)

    order = (Split.TRAIN, Split.VALID, Split.TEST)
    assigned: dict[str, Split] = {}
    for key in sorted(strata):
        group = strata[key]
        rng = np.random.default_rng(np.random.SeedSequence((seed, zlib.crc32(key.encode()))))
        shuffled = [group[i] for i in rng.permutation(len(group))]
        counts = _largest_remainder(len(group), fracs)
        pos = 0
        for split, count in zip(order, counts):
            for action in shuffled[pos : pos + count]:
                assigned[action.action_id] = split
            pos += count

    return replace(
        manifest,
        actions=tuple(replace(a, split=assigned[a.action_id]) for a in manifest.actions),
    )
