"""The alternating decision/generation loop, scoring, and the run harness.

One run walks a time grid: at each step the decision side (gate plus
cascade) advances the state, then the generation side produces the next
image from that state.  Strictly decision-then-generation, two
backend-visible operations per step.  Scoring compares predicted states to
ground truth at output points only, as 0/1 exact-match indicators.
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .agents import (
    CallContext,
    DecisionBackendDescriptor,
    DecisionStack,
    DEFAULT_RETRIES,
    TransitionDecision,
    build_decision_stack,
    cascade_predict,
    stc_decide,
)
from .errors import ClosedLoopError, MstpError, NoOutputPoints
from .generation import Generator, GeneratorDescriptor, build_generator, generate_next
from .images import ImageBuffer, save_image
from .model import LevelSchema, StateVector, TimeGrid
from .sequences import GridAlignment

EVERY_STEP = "every_step"
OUTPUT_ONLY = "output_only"
GATE_POLICIES = (EVERY_STEP, OUTPUT_ONLY)


@dataclass(frozen=True)
class StepRecord:
    """One trajectory entry: the state and image after step ``k``."""

    k: int
    state: StateVector
    image: ImageBuffer
    is_output: bool
    decision: TransitionDecision | None
    wall_time: float


@dataclass(frozen=True)
class Trajectory:
    """States and images produced by one closed-loop run."""

    clip_id: str
    grid: TimeGrid
    initial_state: StateVector
    initial_image: ImageBuffer
    entries: tuple[StepRecord, ...]
    start_step: int = 0


@dataclass(frozen=True)
class ScoreReport:
    """Output-point indicators and their mean.

    ``per_level`` holds the fraction of output points at which each level
    (1-based position order) matched, independent of the other levels.
    """

    clip_id: str
    indicators: tuple[tuple[int, bool], ...]
    objective: float
    per_level: tuple[float, ...]


def run_closed_loop(
    schema: LevelSchema,
    clip_id: str,
    initial_state: StateVector,
    initial_image: ImageBuffer,
    grid: TimeGrid,
    dm: DecisionStack,
    vg: Generator,
    policy: str = EVERY_STEP,
    start_step: int = 0,
) -> Trajectory:
    """Run the loop from ``start_step`` to the end of the grid.

    Per step k: the gate decides; on a transition the cascade re-predicts
    from the named level down; the generator then produces the next image
    from the new state.  With the ``output_only`` policy the decision side
    is skipped entirely at unscored steps (recorded as a ``None`` decision).

    Raises:
        ClosedLoopError: a backend failed; carries the failing step and the
            trajectory accumulated so far.
    """
    if policy not in GATE_POLICIES:
        raise MstpError(f"unknown gating policy {policy!r}")
    entries: list[StepRecord] = []
    state = initial_state
    image = initial_image
    for k in range(start_step, grid.n_steps):
        target = k + 1
        started = time.perf_counter()
        try:
            ctx = CallContext(clip_id=clip_id, step_k=k)
            is_output = grid.is_output_point(target)
            decision: TransitionDecision | None
            if policy == OUTPUT_ONLY and not is_output:
                decision = None
            else:
                decision = stc_decide(state, image, dm.stc, ctx)
                if decision.is_transition:
                    state = cascade_predict(
                        schema, decision.level, state, image, dm.agents, ctx,
                        retries=dm.retries,
                    )
            image = generate_next(state, image, vg, ctx)
        except MstpError as exc:
            partial = Trajectory(
                clip_id=clip_id,
                grid=grid,
                initial_state=initial_state,
                initial_image=initial_image,
                entries=tuple(entries),
                start_step=start_step,
            )
            raise ClosedLoopError(step_k=target, partial=partial, cause=exc) from exc
        entries.append(
            StepRecord(
                k=target,
                state=state,
                image=image,
                is_output=is_output,
                decision=decision,
                wall_time=time.perf_counter() - started,
            )
        )
    return Trajectory(
        clip_id=clip_id,
        grid=grid,
        initial_state=initial_state,
        initial_image=initial_image,
        entries=tuple(entries),
        start_step=start_step,
    )


def score_trajectory(traj: Trajectory, truth: GridAlignment) -> ScoreReport:
    """Score output points against aligned ground truth.

    Raises:
        NoOutputPoints: the trajectory contains no scored step, so the
            objective is undefined (never silently 0).
        MissingTruth: the alignment lacks a frame at a scored step.
    """
    scored = [entry for entry in traj.entries if entry.is_output]
    if not scored:
        raise NoOutputPoints(
            f"trajectory {traj.clip_id!r} has no output points to score"
        )
    depth = len(traj.initial_state.labels)
    level_hits = [0] * depth
    indicators: list[tuple[int, bool]] = []
    for entry in scored:
        expected = truth.state_at(entry.k)
        indicators.append((entry.k, entry.state.labels == expected.labels))
        for pos in range(depth):
            if entry.state.labels[pos] == expected.labels[pos]:
                level_hits[pos] += 1
    objective = sum(1 for _, hit in indicators if hit) / len(indicators)
    per_level = tuple(hits / len(indicators) for hits in level_hits)
    return ScoreReport(
        clip_id=traj.clip_id,
        indicators=tuple(indicators),
        objective=objective,
        per_level=per_level,
    )


# ---------------------------------------------------------------------------
# the many-clip harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunSettings:
    """Everything one evaluation run needs besides the clips themselves."""

    incremental_scale: float
    temporal_scale: float
    dm: DecisionBackendDescriptor
    vg: GeneratorDescriptor
    policy: str = EVERY_STEP
    retries: int = DEFAULT_RETRIES
    workers: int | None = None


@dataclass(frozen=True)
class ClipOutcome:
    clip_id: str
    trajectory: Trajectory
    report: ScoreReport


@dataclass(frozen=True)
class RunResult:
    """Per-clip outcomes (sorted by clip id) plus aggregate means."""

    outcomes: tuple[ClipOutcome, ...]
    aggregate_objective: float
    aggregate_per_level: tuple[float, ...]


def _evaluate_one(schema, clip, settings: RunSettings, client) -> ClipOutcome:
    from .dataset import clip_alignment

    grid = clip_grid(clip, settings)
    truth = clip_alignment(clip, settings.incremental_scale)
    stack = build_decision_stack(
        settings.dm, schema, truth=truth, retries=settings.retries, client=client
    )
    generator = build_generator(settings.vg, truth=truth, client=client)
    trajectory = run_closed_loop(
        schema,
        clip.clip_id,
        truth.state_at(0),
        truth.image_at(0),
        grid,
        stack,
        generator,
        policy=settings.policy,
    )
    report = score_trajectory(trajectory, truth)
    return ClipOutcome(clip_id=clip.clip_id, trajectory=trajectory, report=report)


def clip_grid(clip, settings: RunSettings) -> TimeGrid:
    from .model import make_time_grid

    return make_time_grid(
        clip.horizon, settings.incremental_scale, settings.temporal_scale
    )


def evaluate_clips(
    schema: LevelSchema,
    clips: Sequence,
    settings: RunSettings,
    client=None,
) -> RunResult:
    """Evaluate every clip, bounded-concurrently, order-independently.

    Clip results are deterministic functions of their seeds and ids, so the
    worker count cannot change any output; aggregation always runs in
    sorted clip order.
    """
    workers = settings.workers or os.cpu_count() or 1
    outcomes: dict[str, ClipOutcome] = {}
    if workers == 1 or len(clips) <= 1:
        for clip in clips:
            outcomes[clip.clip_id] = _evaluate_one(schema, clip, settings, client)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                clip.clip_id: pool.submit(
                    _evaluate_one, schema, clip, settings, client
                )
                for clip in clips
            }
            for clip_id, future in futures.items():
                outcomes[clip_id] = future.result()
    ordered = tuple(outcomes[cid] for cid in sorted(outcomes))
    if not ordered:
        return RunResult(outcomes=(), aggregate_objective=0.0, aggregate_per_level=())
    objective = sum(o.report.objective for o in ordered) / len(ordered)
    depth = len(ordered[0].report.per_level)
    per_level = tuple(
        sum(o.report.per_level[pos] for o in ordered) / len(ordered)
        for pos in range(depth)
    )
    return RunResult(
        outcomes=ordered,
        aggregate_objective=objective,
        aggregate_per_level=per_level,
    )


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def trajectory_records(traj: Trajectory, image_paths: Mapping[int, str] | None = None):
    """Dump records for one trajectory, one per step."""
    paths = image_paths or {}
    for entry in traj.entries:
        yield {
            "clip_id": traj.clip_id,
            "k": entry.k,
            "labels": list(entry.state.labels),
            "image_path": paths.get(entry.k, ""),
            "is_output": entry.is_output,
            "dm_decision": entry.decision.encode() if entry.decision else "gated",
        }


def write_trajectories(
    result: RunResult, path: str | Path, image_dir: str | Path | None = None
) -> None:
    """Write the line-delimited trajectory dump, optionally saving images.

    The dump carries no timestamps, so identical runs produce identical
    bytes; wall-clock data belongs in the run's sidecar file.
    """
    image_root = Path(image_dir) if image_dir is not None else None
    with open(path, "w") as fh:
        for outcome in result.outcomes:
            paths: dict[int, str] = {}
            if image_root is not None:
                clip_dir = image_root / outcome.clip_id.replace("/", "_")
                clip_dir.mkdir(parents=True, exist_ok=True)
                for entry in outcome.trajectory.entries:
                    target = clip_dir / f"{entry.k}.png"
                    save_image(entry.image, str(target))
                    paths[entry.k] = str(target)
            for record in trajectory_records(outcome.trajectory, paths):
                fh.write(json.dumps(record) + "\n")


def write_scores(
    result: RunResult, path: str | Path, level_names: Sequence[str]
) -> None:
    """Write the per-clip score table with a trailing aggregate row."""
    columns = ["clip_id", "output_points", "correct", "objective"] + [
        f"level_{name}" for name in level_names
    ]
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for outcome in result.outcomes:
            report = outcome.report
            correct = sum(1 for _, hit in report.indicators if hit)
            row = [
                outcome.clip_id,
                str(len(report.indicators)),
                str(correct),
                repr(report.objective),
            ] + [repr(v) for v in report.per_level]
            fh.write(",".join(row) + "\n")
        aggregate = ["aggregate", "", "", repr(result.aggregate_objective)] + [
            repr(v) for v in result.aggregate_per_level
        ]
        fh.write(",".join(aggregate) + "\n")
