"""Shared builders for synthetic schemas, sequences, and clips."""
from __future__ import annotations

import numpy as np

from mstp.dataset import Clip
from mstp.images import ImageBuffer
from mstp.model import Level, LevelSchema
from mstp.sequences import AnnotatedSequence, Frame


def two_level_schema() -> LevelSchema:
    """A small phase/step hierarchy with real containment."""
    return LevelSchema(
        (
            Level(
                "phase",
                ("prep", "work", "close"),
                {
                    "prep": ("idle", "setup"),
                    "work": ("cut", "sew"),
                    "close": ("wrap",),
                },
            ),
            Level("step", ("idle", "setup", "cut", "sew", "wrap"), {}),
        )
    )


def permissive_schema(depth: int, fanout: int = 2) -> LevelSchema:
    """Every parent allows every child label; depth levels, fanout labels.

    Useful when a test needs per-level choices to be unconstrained, for
    example to measure marginal error rates without containment effects.
    """
    levels = []
    for pos in range(1, depth + 1):
        labels = tuple(f"l{pos}v{j}" for j in range(fanout))
        if pos < depth:
            child_labels = tuple(f"l{pos + 1}v{j}" for j in range(fanout))
            children = {label: child_labels for label in labels}
        else:
            children = {}
        levels.append(Level(f"level{pos}", labels, children))
    return LevelSchema(tuple(levels))


def gray_image(value: int, height: int = 8, width: int = 8) -> ImageBuffer:
    pixels = np.full((height, width, 1), value, dtype=np.uint8)
    return ImageBuffer.from_array(pixels)


def random_image(
    rng: np.random.Generator, height: int = 8, width: int = 8, channels: int = 1
) -> ImageBuffer:
    pixels = rng.integers(0, 256, size=(height, width, channels), dtype=np.uint8)
    return ImageBuffer.from_array(pixels)


def sequence_from_labels(
    schema: LevelSchema,
    labels: list[tuple[str, ...]],
    sequence_id: str = "seq0",
    fps: float = 1.0,
    image_seed: int = 0,
) -> AnnotatedSequence:
    """One frame per label tuple, with distinct seeded random images."""
    rng = np.random.default_rng(image_seed)
    frames = tuple(
        Frame(idx=i, state=schema.state(*row), image=random_image(rng))
        for i, row in enumerate(labels)
    )
    return AnnotatedSequence(sequence_id=sequence_id, fps=fps, frames=frames)


def clip_from_labels(
    schema: LevelSchema,
    labels: list[tuple[str, ...]],
    clip_id: str = "clip0",
    fps: float = 1.0,
    image_seed: int = 0,
) -> Clip:
    seq = sequence_from_labels(schema, labels, f"src-{clip_id}", fps, image_seed)
    return Clip(
        clip_id=clip_id,
        sequence_id=seq.sequence_id,
        horizon=(len(labels) - 1) / fps,
        start_idx=0,
        fps=fps,
        frames=seq.frames,
    )


def random_walk_labels(
    schema: LevelSchema,
    steps: int,
    rng: np.random.Generator,
    change_prob: float = 0.4,
) -> list[tuple[str, ...]]:
    """A containment-respecting label path that changes stochastically."""
    top = schema.labels_at(1)
    current = [str(rng.choice(top))]
    for level in range(2, schema.depth + 1):
        allowed = schema.allowed_labels(level, current[-1])
        current.append(str(rng.choice(allowed)))
    rows = [tuple(current)]
    for _ in range(steps):
        if rng.random() < change_prob:
            level = int(rng.integers(1, schema.depth + 1))
            working = list(rows[-1])
            for pos in range(level, schema.depth + 1):
                parent = working[pos - 2] if pos > 1 else None
                allowed = schema.allowed_labels(pos, parent)
                working[pos - 1] = str(rng.choice(allowed))
            rows.append(tuple(working))
        else:
            rows.append(rows[-1])
    return rows
