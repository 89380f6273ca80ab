"""Benchmark clip construction, splits, and clip manifests.

A clip is one evaluation sample: the frame and state at a window start,
plus the future frames and states covering one horizon at a fixed sampling
rate.  Clips built from the same start index share their first frame
across horizons.  Manifests are line-delimited JSON, one clip per line,
with unknown fields preserved through a round trip.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import EmptyInput, ParseError, SchemaError, SequenceTooShort
from .model import LevelSchema, StateVector, validate_state
from .seeding import derive_rng
from .sequences import AnnotatedSequence, Frame, GridAlignment, frames_per_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Clip:
    """One benchmark sample at a single horizon.

    ``frames[0]`` is the current frame at the window start; the rest cover
    the horizon at ``fps`` frames per second, so a clip holds
    ``horizon * fps + 1`` frames and one state per frame.
    """

    clip_id: str
    sequence_id: str
    horizon: float
    start_idx: int
    fps: float
    frames: tuple[Frame, ...]
    split: str | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def as_sequence(self) -> AnnotatedSequence:
        return AnnotatedSequence(
            sequence_id=self.clip_id, fps=self.fps, frames=self.frames
        )


@dataclass(frozen=True)
class SplitSpec:
    """Train/test ratio, seed, and the unit of assignment."""

    train: int = 10
    test: int = 1
    seed: int = 0
    unit: str = "clip"

    def __post_init__(self) -> None:
        if self.train <= 0 or self.test <= 0:
            raise SchemaError("split ratio parts must be positive")
        if self.unit not in ("clip", "source-sequence"):
            raise SchemaError(f"unknown split unit {self.unit!r}")

    @classmethod
    def parse(cls, text: str, seed: int = 0, unit: str = "clip") -> "SplitSpec":
        try:
            train, test = (int(part) for part in text.split(":"))
        except ValueError as exc:
            raise SchemaError(f"cannot parse split ratio {text!r}") from exc
        return cls(train=train, test=test, seed=seed, unit=unit)


def clip_alignment(clip: Clip, incremental_scale: float) -> GridAlignment:
    """Alignment of a clip's frames to grid steps of the given scale."""
    stride = frames_per_step(clip.fps, incremental_scale)
    return GridAlignment(seq=clip.as_sequence(), stride=stride)


def build_clips(
    seq: AnnotatedSequence,
    horizons: Sequence[float],
    sample_fps: float = 1.0,
    stride: float = 1.0,
) -> list[Clip]:
    """Extract windows at every start position, one clip per horizon.

    Args:
        seq: source sequence; its fps must be an integer multiple of
            ``sample_fps``.
        horizons: window lengths in seconds.
        sample_fps: sampling rate of clip frames, at most ``seq.fps``.
        stride: seconds between window starts.

    Horizons too long for the sequence are skipped with a warning;
    SequenceTooShort is raised only when nothing at all fits.
    """
    if sample_fps > seq.fps:
        raise SchemaError(
            f"sample rate {sample_fps} exceeds sequence rate {seq.fps}"
        )
    frame_step = frames_per_step(seq.fps, 1.0 / sample_fps)
    stride_frames = frames_per_step(seq.fps, stride)
    total = len(seq.frames)
    clips: list[Clip] = []
    for horizon in horizons:
        span = frames_per_step(sample_fps, horizon)
        produced = 0
        start = 0
        while start + span * frame_step <= total - 1:
            positions = [start + j * frame_step for j in range(span + 1)]
            frames = tuple(seq.frames[pos] for pos in positions)
            clip_id = f"{seq.sequence_id}:{seq.frames[start].idx}:h{horizon:g}"
            clips.append(
                Clip(
                    clip_id=clip_id,
                    sequence_id=seq.sequence_id,
                    horizon=horizon,
                    start_idx=seq.frames[start].idx,
                    fps=sample_fps,
                    frames=frames,
                )
            )
            produced += 1
            start += stride_frames
        if produced == 0:
            warnings.warn(
                f"sequence {seq.sequence_id!r} is too short for horizon "
                f"{horizon} s; skipped",
                stacklevel=2,
            )
    if not clips:
        raise SequenceTooShort(
            f"sequence {seq.sequence_id!r} fits no window at any requested horizon"
        )
    return clips


def split_clips(
    clips: Sequence[Clip], spec: SplitSpec
) -> tuple[list[Clip], list[Clip]]:
    """Deterministic seeded split honoring the ratio within one clip.

    In ``source-sequence`` mode all clips of one sequence land on the same
    side, so the ratio is honored as closely as whole sequences allow.
    Returns (train, test) with each clip's ``split`` field set.
    """
    if not clips:
        raise EmptyInput("cannot split an empty clip list")
    rng = derive_rng(spec.seed, "split", spec.train, spec.test, spec.unit)
    total = len(clips)
    target_test = round(total * spec.test / (spec.train + spec.test))
    test_ids: set[str] = set()
    if spec.unit == "clip":
        order = sorted(clip.clip_id for clip in clips)
        rng.shuffle(order)
        test_ids = set(order[:target_test])
    else:
        groups: dict[str, list[str]] = {}
        for clip in clips:
            groups.setdefault(clip.sequence_id, []).append(clip.clip_id)
        group_order = sorted(groups)
        rng.shuffle(group_order)
        assigned = 0
        for group in group_order:
            if assigned >= target_test:
                break
            test_ids.update(groups[group])
            assigned += len(groups[group])
    train: list[Clip] = []
    test: list[Clip] = []
    for clip in clips:
        side = "test" if clip.clip_id in test_ids else "train"
        stamped = Clip(
            clip_id=clip.clip_id,
            sequence_id=clip.sequence_id,
            horizon=clip.horizon,
            start_idx=clip.start_idx,
            fps=clip.fps,
            frames=clip.frames,
            split=side,
            extra=clip.extra,
        )
        (test if side == "test" else train).append(stamped)
    return train, test


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

_KNOWN_FIELDS = frozenset(
    {"clip_id", "sequence_id", "horizon", "start_idx", "fps", "split", "frames"}
)


def clip_record(clip: Clip) -> dict[str, Any]:
    record: dict[str, Any] = {
        "clip_id": clip.clip_id,
        "sequence_id": clip.sequence_id,
        "horizon": clip.horizon,
        "start_idx": clip.start_idx,
        "fps": clip.fps,
        "frames": [
            {
                "idx": f.idx,
                "image_path": f.image_path,
                "labels": list(f.state.labels),
            }
            for f in clip.frames
        ],
    }
    if clip.split is not None:
        record["split"] = clip.split
    record.update(clip.extra)
    return record


def clip_from_record(record: Mapping[str, Any], schema: LevelSchema) -> Clip:
    frames = tuple(
        Frame(
            idx=f["idx"],
            image_path=f.get("image_path"),
            state=StateVector(tuple(f["labels"]), schema.digest),
        )
        for f in record["frames"]
    )
    extra = {k: v for k, v in record.items() if k not in _KNOWN_FIELDS}
    return Clip(
        clip_id=record["clip_id"],
        sequence_id=record["sequence_id"],
        horizon=record["horizon"],
        start_idx=record["start_idx"],
        fps=record["fps"],
        frames=frames,
        split=record.get("split"),
        extra=extra,
    )


def write_manifest(clips: Iterable[Clip], path: str | Path) -> None:
    with open(path, "w") as fh:
        for clip in clips:
            fh.write(json.dumps(clip_record(clip)) + "\n")


def read_manifest(path: str | Path, schema: LevelSchema) -> list[Clip]:
    """Read a clip manifest, validating every state against the schema.

    Raises:
        ParseError: malformed line (names the line) or a state violating
            the schema (names the clip).
    """
    clips: list[Clip] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                clip = clip_from_record(record, schema)
            except (json.JSONDecodeError, KeyError, TypeError, SchemaError) as exc:
                raise ParseError(f"bad clip record: {exc}", line=line_no) from exc
            for frame in clip.frames:
                result = validate_state(schema, frame.state)
                if not result:
                    raise ParseError(
                        f"clip {clip.clip_id!r} frame {frame.idx}: {result}",
                        line=line_no,
                    )
            clips.append(clip)
    return clips
