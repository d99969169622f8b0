"""Deterministic synthetic multi-view clip generator.

Each action is a little physics vignette: an attacker blob approaches a
static opponent blob and collides at the contact frame. The foul class
fixes the approach direction, speed and satellite-blob count, so class
identity is readable from any informative view (and linearly separable
from mean-frame features). Offence severity scales a brightness flash
around the collision, so the severity task reads off the same frames.

Live views carry the class signature only with a configurable
probability; replay views always carry it, at half speed with a random
alignment offset. Everything derives from (seed, action index), so a
config reproduces its dataset bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    ActionClass,
    Annotation,
    Bodypart,
    CameraKind,
    ClipMeta,
    Contact,
    FoulAction,
    Handball,
    HandballOffence,
    Manifest,
    Offence,
    PlayBall,
    Split,
    Task1Label,
    UpperBodyPart,
    YesNo,
    save_manifest,
    write_clip_frames,
)
from .errors import ConfigError

# Observed class proportions of the real dataset (8 foul classes,
# renormalized to exclude the unclassifiable remainder).
TABLE_CLASS_PERCENT = {
    Task1Label.STANDING_TACKLING: 43.6,
    Task1Label.TACKLING: 15.6,
    Task1Label.HIGH_LEG: 3.5,
    Task1Label.PUSHING: 2.9,
    Task1Label.HOLDING: 12.5,
    Task1Label.ELBOWING: 5.9,
    Task1Label.CHALLENGE: 13.0,
    Task1Label.DIVE: 0.9,
}

DEFAULT_REPLAY_COUNTS = {1: 0.75, 2: 0.20, 3: 0.05}

NO_OFFENCE_PROB = 0.107
BETWEEN_PROB = 0.034

# Cards per class (no card / yellow / red), i.e. severities 1 / 3 / 5.
_CARD_DISTS = {
    Task1Label.STANDING_TACKLING: (0.79, 0.18, 0.02),
    Task1Label.TACKLING: (0.37, 0.58, 0.04),
    Task1Label.HIGH_LEG: (0.31, 0.63, 0.06),
    Task1Label.PUSHING: (0.99, 0.01, 0.00),
    Task1Label.HOLDING: (0.60, 0.40, 0.00),
    Task1Label.ELBOWING: (0.43, 0.53, 0.03),
    Task1Label.CHALLENGE: (0.94, 0.05, 0.01),
    Task1Label.DIVE: (0.00, 1.00, 0.00),
}


@dataclass(frozen=True)
class ClassSignature:
    """Motion pattern and annotation template for one foul class."""

    label: Task1Label
    angle: float  # approach direction, radians
    speed: float  # pixels per world frame
    satellites: int  # rigid companion blobs around the attacker
    severity_probs: tuple[float, float, float]  # over severities (1, 3, 5)
    bodypart: Bodypart
    upper_body_part: UpperBodyPart
    contact: Contact
    try_to_play: YesNo
    play_ball: PlayBall


def _signature(i: int, label: Task1Label, bodypart, upper, contact, try_play, play_ball):
    probs = _CARD_DISTS[label]
    total = sum(probs)
    return ClassSignature(
        label=label,
        angle=2.0 * math.pi * i / 8.0,
        speed=0.45 + 0.10 * (i % 2),
        satellites=1 + (i % 3),
        severity_probs=tuple(p / total for p in probs),
        bodypart=bodypart,
        upper_body_part=upper,
        contact=contact,
        try_to_play=try_play,
        play_ball=play_ball,
    )


SIGNATURES: dict[Task1Label, ClassSignature] = {
    sig.label: sig
    for sig in (
        _signature(0, Task1Label.STANDING_TACKLING, Bodypart.UNDER,
                   UpperBodyPart.NOT_APPLICABLE, Contact.WITH, YesNo.YES, PlayBall.YES),
        _signature(1, Task1Label.TACKLING, Bodypart.UNDER,
                   UpperBodyPart.NOT_APPLICABLE, Contact.WITH, YesNo.YES, PlayBall.YES),
        _signature(2, Task1Label.HIGH_LEG, Bodypart.UNDER,
                   UpperBodyPart.NOT_APPLICABLE, Contact.WITH, YesNo.YES, PlayBall.NO),
        _signature(3, Task1Label.PUSHING, Bodypart.UPPER,
                   UpperBodyPart.ARM, Contact.WITH, YesNo.NO, PlayBall.NO),
        _signature(4, Task1Label.HOLDING, Bodypart.UPPER,
                   UpperBodyPart.ARM, Contact.WITH, YesNo.NO, PlayBall.NO),
        _signature(5, Task1Label.ELBOWING, Bodypart.UPPER,
                   UpperBodyPart.ARM, Contact.WITH, YesNo.NO, PlayBall.NO),
        _signature(6, Task1Label.CHALLENGE, Bodypart.UPPER,
                   UpperBodyPart.SHOULDER, Contact.WITH, YesNo.YES, PlayBall.MAYBE),
        _signature(7, Task1Label.DIVE, Bodypart.UNDER,
                   UpperBodyPart.NOT_APPLICABLE, Contact.WITHOUT, YesNo.NO, PlayBall.NO),
    )
}

SEVERITY_CHOICES = (1, 3, 5)


@dataclass
class GenConfig:
    n_actions: int
    frames_per_clip: int = 52
    height: int = 24
    width: int = 40
    class_distribution: dict[Task1Label, float] = field(default_factory=dict)  # empty = real-data mix
    live_informative_prob: float = 0.5
    replay_count_distribution: dict[int, float] = field(default_factory=dict)  # empty = {1:.75,2:.2,3:.05}
    noise_std: float = 0.05
    seed: int = 0

    def resolved_class_probs(self) -> tuple[list[Task1Label], np.ndarray]:
        dist = self.class_distribution or {
            k: v / 100.0 for k, v in TABLE_CLASS_PERCENT.items()
        }
        labels = list(Task1Label)
        probs = np.array([float(dist.get(lbl, 0.0)) for lbl in labels])
        total = probs.sum()
        if np.any(probs < 0) or total <= 0:
            raise ConfigError("class_distribution must be non-negative with positive mass")
        if self.class_distribution and abs(total - 1.0) > 1e-9:
            raise ConfigError(f"class_distribution must sum to 1, got {total}")
        return labels, probs / total

    def resolved_replay_probs(self) -> tuple[list[int], np.ndarray]:
        dist = self.replay_count_distribution or DEFAULT_REPLAY_COUNTS
        counts = sorted(dist)
        if any(c not in (1, 2, 3) for c in counts):
            raise ConfigError(f"replay counts must be within 1..3, got {counts}")
        probs = np.array([float(dist[c]) for c in counts])
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ConfigError(f"replay_count_distribution must sum to 1, got {probs.sum()}")
        return counts, probs

    def validate(self) -> None:
        if self.n_actions < 1:
            raise ConfigError(f"n_actions must be >= 1, got {self.n_actions}")
        if self.frames_per_clip < 16:
            raise ConfigError(f"frames_per_clip must be >= 16, got {self.frames_per_clip}")
        if self.height < 8 or self.width < 8:
            raise ConfigError(f"frame size too small: {self.height}x{self.width}")
        if not 0.0 <= self.live_informative_prob <= 1.0:
            raise ConfigError(f"live_informative_prob outside [0,1]: {self.live_informative_prob}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        self.resolved_class_probs()
        self.resolved_replay_probs()

    def contact_frame(self) -> int:
        # collision sits 4 frames before the clip end (frame 48 of 52)
        return self.frames_per_clip - 4

    def replay_contact_range(self) -> tuple[int, int]:
        """Half-open range the replay's own contact frame is drawn from."""
        lo = max(1, round(self.frames_per_clip * 0.38))
        hi = max(lo + 1, round(self.frames_per_clip * 0.63))
        return lo, hi


def uniform_class_distribution() -> dict[Task1Label, float]:
    return {lbl: 1.0 / 8.0 for lbl in Task1Label}


def annotate_synthetic(sig: ClassSignature, rng: np.random.Generator) -> Annotation:
    """Fill all ten properties consistently with the class signature."""
    u = rng.random()
    if u < BETWEEN_PROB:
        offence = Offence.BETWEEN
    elif u < BETWEEN_PROB + NO_OFFENCE_PROB:
        offence = Offence.NO_OFFENCE
    else:
        offence = Offence.OFFENCE
    severity = int(rng.choice(SEVERITY_CHOICES, p=sig.severity_probs))
    return Annotation(
        offence=offence,
        action_class=ActionClass(sig.label.value),
        severity=severity,
        contact=sig.contact,
        bodypart=sig.bodypart,
        upper_body_part=sig.upper_body_part,
        try_to_play=sig.try_to_play,
        play_ball=sig.play_ball,
        handball=Handball.NO_HANDBALL,
        handball_offence=HandballOffence.NOT_APPLICABLE,
    )


_BACKGROUND = 0.05
_ATTACKER_AMP = 0.45
_ATTACKER_SIGMA = 1.8
_SATELLITE_AMP = 0.30
_SATELLITE_SIGMA = 0.9
_SATELLITE_RADIUS = 3.2
_OPPONENT_AMP = 0.40
_OPPONENT_SIGMA = 2.2
_FLASH_PER_SEVERITY = 0.08
_FLASH_TIME_SIGMA = 2.0


def _render_clip(
    world_times: np.ndarray,
    contact_world: float,
    center: tuple[float, float],
    sig: ClassSignature,
    severity_signal: float,
    informative: bool,
    noise_rng: np.random.Generator,
    cfg: GenConfig,
) -> np.ndarray:
    """Frames [F x H x W] on the float32 grid, values in [0,1]."""
    h, w = cfg.height, cfg.width
    frames = np.full((len(world_times), h, w), _BACKGROUND)
    if informative:
        yy = np.arange(h, dtype=np.float64)[None, :, None]
        xx = np.arange(w, dtype=np.float64)[None, None, :]
        cy, cx = center
        dy, dx = math.sin(sig.angle), math.cos(sig.angle)
        reach = sig.speed * (world_times - contact_world)
        py = (cy + dy * reach)[:, None, None]
        px = (cx + dx * reach)[:, None, None]
        flash = severity_signal * _FLASH_PER_SEVERITY * np.exp(
            -((world_times - contact_world) ** 2) / (2 * _FLASH_TIME_SIGMA**2)
        )
        frames += (_ATTACKER_AMP + flash)[:, None, None] * np.exp(
            -((yy - py) ** 2 + (xx - px) ** 2) / (2 * _ATTACKER_SIGMA**2)
        )
        for k in range(sig.satellites):
            phi = sig.angle + math.pi / 2 + 2 * math.pi * k / sig.satellites
            sy = py + _SATELLITE_RADIUS * math.sin(phi)
            sx = px + _SATELLITE_RADIUS * math.cos(phi)
            frames += _SATELLITE_AMP * np.exp(
                -((yy - sy) ** 2 + (xx - sx) ** 2) / (2 * _SATELLITE_SIGMA**2)
            )
        # opponent waits just past the contact point along the approach line
        oy, ox = cy + 3.0 * dy, cx + 3.0 * dx
        frames += _OPPONENT_AMP * np.exp(
            -((yy - oy) ** 2 + (xx - ox) ** 2) / (2 * _OPPONENT_SIGMA**2)
        )
    if cfg.noise_std > 0:
        frames += noise_rng.normal(0.0, cfg.noise_std, frames.shape)
    np.clip(frames, 0.0, 1.0, out=frames)
    # pin to the float32 grid so payload write -> read is bitwise lossless
    return frames.astype("<f4").astype(np.float64)


def generate(config: GenConfig, out_dir: str | Path) -> Manifest:
    """Write payloads plus manifest.json under out_dir; returns the manifest."""
    config.validate()
    labels, class_probs = config.resolved_class_probs()
    replay_counts, replay_probs = config.resolved_replay_probs()
    out = Path(out_dir)
    (out / "payloads").mkdir(parents=True, exist_ok=True)

    f_count = config.frames_per_clip
    contact_live = config.contact_frame()
    actions = []
    for idx in range(config.n_actions):
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, idx)))
        aid = f"a{idx:05d}"
        sig = SIGNATURES[labels[int(rng.choice(len(labels), p=class_probs))]]
        n_replays = int(rng.choice(replay_counts, p=np.asarray(replay_probs)))
        annotation = annotate_synthetic(sig, rng)
        jitter_y, jitter_x = rng.integers(-2, 3, size=2)
        center = (config.height / 2.0 + float(jitter_y), config.width / 2.0 + float(jitter_x))
        live_informative = rng.random() < config.live_informative_prob
        rc_lo, rc_hi = config.replay_contact_range()
        replay_contacts = [int(rng.integers(rc_lo, rc_hi)) for _ in range(n_replays)]

        severity_signal = (
            0.0 if annotation.offence is Offence.NO_OFFENCE else float(annotation.severity)
        )

        clips = []
        for clip_no in range(n_replays + 1):
            noise_rng = np.random.default_rng(
                np.random.SeedSequence((config.seed, idx, clip_no))
            )
            if clip_no == 0:
                clip_id = f"{aid}_live"
                kind = CameraKind.LIVE
                world_times = np.arange(f_count, dtype=np.float64)
                informative = live_informative
                speed, offset, contact = 1.0, 0, contact_live
            else:
                clip_id = f"{aid}_r{clip_no}"
                kind = CameraKind.REPLAY
                speed = 0.5
                contact = replay_contacts[clip_no - 1]
                world_times = contact_live + speed * (
                    np.arange(f_count, dtype=np.float64) - contact
                )
                informative = True
                offset = contact - round(contact_live / speed)
            frames = _render_clip(
                world_times,
                float(contact_live),
                center,
                sig,
                severity_signal,
                informative,
                noise_rng,
                config,
            )
            payload_path = f"payloads/{clip_id}.mvfc"
            write_clip_frames(out / payload_path, frames)
            clips.append(
                ClipMeta(
                    clip_id=clip_id,
                    camera_kind=kind,
                    frame_count=f_count,
                    fps=16,
                    height=config.height,
                    width=config.width,
                    offset_frames=offset,
                    replay_speed=speed,
                    contact_frame=contact,
                    payload_path=payload_path,
                )
            )
        actions.append(
            FoulAction(
                action_id=aid,
                clips=tuple(clips),
                annotation=annotation,
                split=Split.TRAIN,
            )
        )

    manifest = Manifest(
        format_version=1,
        dataset_name=f"synth-seed{config.seed}",
        base_dir=".",
        actions=tuple(actions),
        manifest_dir=out,
    )
    save_manifest(manifest, out / "manifest.json")
    return manifest
