"""Annotated frame sequences and their alignment to time grids."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .errors import MissingGroundTruth, MissingTruth, SchemaError
from .images import ImageBuffer, load_image
from .model import LevelSchema, StateVector, TimeGrid, validate_state


@dataclass(frozen=True)
class Frame:
    """One annotated frame: an index, an image reference, and a state.

    The image may live on disk (``image_path``) or in memory (``image``);
    at least one must be present for operations that need pixels.
    """

    idx: int
    state: StateVector
    image_path: str | None = None
    image: ImageBuffer | None = None


@dataclass(frozen=True)
class AnnotatedSequence:
    """A frame sequence with per-frame hierarchical annotations."""

    sequence_id: str
    fps: float
    frames: tuple[Frame, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise SchemaError(f"sequence {self.sequence_id!r} has no frames")
        if self.fps <= 0:
            raise SchemaError(f"sequence {self.sequence_id!r} fps must be positive")
        indices = [f.idx for f in self.frames]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise SchemaError(
                f"sequence {self.sequence_id!r} frame indices must strictly increase"
            )

    def __len__(self) -> int:
        return len(self.frames)

    def frame_image(self, position: int) -> ImageBuffer:
        """Pixels of the frame at a 0-based position."""
        frame = self.frames[position]
        if frame.image is not None:
            return frame.image
        if frame.image_path is None:
            raise MissingGroundTruth(
                f"sequence {self.sequence_id!r} frame {frame.idx} has no image"
            )
        return _load_cached(frame.image_path)


@lru_cache(maxsize=4096)
def _load_cached(path: str) -> ImageBuffer:
    return load_image(path)


def validate_sequence(seq: AnnotatedSequence, schema: LevelSchema) -> None:
    """Raise SchemaError on the first frame whose state violates the schema."""
    for frame in seq.frames:
        result = validate_state(schema, frame.state)
        if not result:
            raise SchemaError(
                f"sequence {seq.sequence_id!r} frame {frame.idx}: {result}"
            )


def frames_per_step(fps: float, incremental_scale: float) -> int:
    """Frames spanned by one incremental step; must be a whole number."""
    raw = fps * incremental_scale
    step = round(raw)
    if step < 1 or abs(raw - step) > 1e-9 * max(1.0, raw):
        raise SchemaError(
            f"incremental scale {incremental_scale} s at {fps} fps does not land "
            f"on whole frames"
        )
    return int(step)


@dataclass(frozen=True)
class GridAlignment:
    """Maps grid steps onto a sequence's frames.

    Step k (0-based step 0 is the initial instant) resolves to the frame at
    position ``start_pos + k * stride`` in the frame list.
    """

    seq: AnnotatedSequence
    stride: int
    start_pos: int = 0

    def _position(self, k: int) -> int:
        return self.start_pos + k * self.stride

    @property
    def max_step(self) -> int:
        """Largest step with a backing frame."""
        return (len(self.seq.frames) - 1 - self.start_pos) // self.stride

    def has_step(self, k: int) -> bool:
        return 0 <= k <= self.max_step

    def state_at(self, k: int) -> StateVector:
        if not self.has_step(k):
            raise MissingTruth(
                f"sequence {self.seq.sequence_id!r} has no frame for step {k}"
            )
        return self.seq.frames[self._position(k)].state

    def image_at(self, k: int) -> ImageBuffer:
        if not self.has_step(k):
            raise MissingGroundTruth(
                f"sequence {self.seq.sequence_id!r} has no frame for step {k}"
            )
        return self.seq.frame_image(self._position(k))


def align_to_grid(
    seq: AnnotatedSequence, grid: TimeGrid, start_pos: int = 0
) -> GridAlignment:
    """Alignment of a sequence to a grid, one step per incremental scale."""
    stride = frames_per_step(seq.fps, grid.incremental_scale)
    return GridAlignment(seq=seq, stride=stride, start_pos=start_pos)


def resample_to_grid(
    seq: AnnotatedSequence, grid: TimeGrid, start_pos: int = 0
) -> AnnotatedSequence:
    """Subsequence holding one frame per incremental step (step 0..N).

    The result has at most ``grid.n_steps + 1`` frames, fewer when the
    source ends early.
    """
    alignment = align_to_grid(seq, grid, start_pos)
    last = min(grid.n_steps, alignment.max_step)
    frames = tuple(
        seq.frames[alignment._position(k)] for k in range(0, last + 1)
    )
    return AnnotatedSequence(
        sequence_id=seq.sequence_id,
        fps=seq.fps / alignment.stride,
        frames=frames,
    )
