"""Shared builders for dataset fixtures used across test modules."""

from pathlib import Path

import numpy as np

from mvfouls.data import (
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
    UpperBodyPart,
    YesNo,
    write_clip_frames,
)


def make_annotation(**overrides) -> Annotation:
    base = dict(
        offence=Offence.OFFENCE,
        action_class=ActionClass.TACKLING,
        severity=1,
        contact=Contact.WITH,
        bodypart=Bodypart.UNDER,
        upper_body_part=UpperBodyPart.NOT_APPLICABLE,
        try_to_play=YesNo.YES,
        play_ball=PlayBall.MAYBE,
        handball=Handball.NO_HANDBALL,
        handball_offence=HandballOffence.NOT_APPLICABLE,
    )
    base.update(overrides)
    return Annotation(**base)


def make_clip(
    clip_id: str,
    camera_kind: CameraKind = CameraKind.REPLAY,
    frame_count: int = 16,
    height: int = 4,
    width: int = 5,
    contact_frame: int | None = 8,
    payload_dir: Path | None = None,
    seed: int = 0,
) -> ClipMeta:
    """ClipMeta with an optional real payload written under payload_dir."""
    payload_path = f"payloads/{clip_id}.mvfc"
    if payload_dir is not None:
        rng = np.random.default_rng(seed)
        frames = rng.random((frame_count, height, width)).astype("<f4").astype(np.float64)
        target = payload_dir / payload_path
        target.parent.mkdir(parents=True, exist_ok=True)
        write_clip_frames(target, frames)
    return ClipMeta(
        clip_id=clip_id,
        camera_kind=camera_kind,
        frame_count=frame_count,
        fps=16,
        height=height,
        width=width,
        offset_frames=0,
        replay_speed=1.0 if camera_kind is CameraKind.LIVE else 0.5,
        contact_frame=contact_frame,
        payload_path=payload_path,
    )


def make_action(
    action_id: str,
    n_clips: int = 2,
    annotation: Annotation | None = None,
    split: Split = Split.TRAIN,
    payload_dir: Path | None = None,
    **clip_kw,
) -> FoulAction:
    clips = [
        make_clip(
            f"{action_id}_live",
            camera_kind=CameraKind.LIVE,
            payload_dir=payload_dir,
            seed=hash(action_id) % 2**31,
            **clip_kw,
        )
    ]
    for i in range(1, n_clips):
        clips.append(
            make_clip(
                f"{action_id}_r{i}",
                payload_dir=payload_dir,
                seed=(hash(action_id) + i) % 2**31,
                **clip_kw,
            )
        )
    return FoulAction(
        action_id=action_id,
        clips=tuple(clips),
        annotation=annotation if annotation is not None else make_annotation(),
        split=split,
    )


def make_manifest(actions, manifest_dir: Path = Path(".")) -> Manifest:
    return Manifest(
        format_version=1,
        dataset_name="fixture",
        base_dir=".",
        actions=tuple(actions),
        manifest_dir=manifest_dir,
    )
