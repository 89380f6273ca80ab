"""Hierarchical state space and time discretization primitives.

A prediction problem runs over ``total_duration`` seconds, advanced
internally every ``incremental_scale`` seconds and scored every
``temporal_scale`` seconds.  The incremental scale must divide the temporal
scale, so scored steps are exactly those whose 1-based index is a multiple
of the scale ratio.

States are tuples of labels, one per hierarchy level ordered coarse to
fine, constrained so that each label is an allowed child of the label one
level above it.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

from .errors import NonDivisorScale, NonPositiveDuration, SchemaError

_REL_TOL = 1e-9


def _exact_ceil(x: float) -> int:
    """Ceiling that forgives float noise just below an integer."""
    nearest = round(x)
    if abs(x - nearest) <= _REL_TOL * max(1.0, abs(x)):
        return int(nearest)
    return math.ceil(x)


@dataclass(frozen=True)
class Level:
    """One hierarchy level.

    Args:
        name: level name, unique within its schema.
        labels: the level's label set, duplicate-free.
        children: allowed child labels at the next finer level, keyed by
            this level's labels.  Empty for the finest level.
    """

    name: str
    labels: tuple[str, ...]
    children: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(
            self, "children", {k: tuple(v) for k, v in dict(self.children).items()}
        )


@dataclass(frozen=True)
class LevelSchema:
    """Ordered hierarchy of levels with containment between adjacent levels.

    A state tuple is valid iff each label belongs to its level's label set
    and each label below the top is an allowed child of the label above it.
    """

    levels: tuple[Level, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.levels) < 1:
            raise SchemaError("a schema needs at least one level")
        names = [lv.name for lv in self.levels]
        if len(set(names)) != len(names):
            raise SchemaError("level names must be unique")
        for pos, level in enumerate(self.levels, start=1):
            if not level.labels:
                raise SchemaError(f"level {pos} ({level.name}) has an empty label set")
            if len(set(level.labels)) != len(level.labels):
                raise SchemaError(f"level {pos} ({level.name}) has duplicate labels")
            is_last = pos == len(self.levels)
            if is_last:
                if level.children:
                    raise SchemaError(f"finest level {level.name} cannot have children")
                continue
            child_labels = set(self.levels[pos].labels)
            covered: set[str] = set()
            for parent, kids in level.children.items():
                if parent not in level.labels:
                    raise SchemaError(
                        f"level {pos}: child map keyed by unknown label {parent!r}"
                    )
                if len(set(kids)) != len(kids):
                    raise SchemaError(f"level {pos}: duplicate children for {parent!r}")
                for kid in kids:
                    if kid not in child_labels:
                        raise SchemaError(
                            f"level {pos}: {parent!r} lists unknown child {kid!r}"
                        )
                covered.update(kids)
            if covered != child_labels:
                orphans = sorted(child_labels - covered)
                raise SchemaError(
                    f"level {pos + 1}: labels {orphans} have no parent at level {pos}"
                )

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def level_names(self) -> tuple[str, ...]:
        return tuple(lv.name for lv in self.levels)

    def labels_at(self, level: int) -> tuple[str, ...]:
        """Label set of a 1-based level index."""
        return self.levels[level - 1].labels

    def children_of(self, level: int, label: str) -> tuple[str, ...]:
        """Allowed child labels under ``label`` at 1-based ``level``."""
        return self.levels[level - 1].children.get(label, ())

    def allowed_labels(self, level: int, parent: str | None) -> tuple[str, ...]:
        """Choice set for a level given the already-assembled parent label."""
        if level == 1:
            return self.labels_at(1)
        if parent is None:
            raise SchemaError(f"level {level} needs a parent label")
        return self.children_of(level - 1, parent)

    @cached_property
    def digest(self) -> str:
        """Stable short content hash used as the schema reference id."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def state(self, *labels: str) -> "StateVector":
        """Build a state from labels, raising on any invariant violation."""
        vec = StateVector(tuple(labels), self.digest)
        result = validate_state(self, vec)
        if not result:
            raise SchemaError(str(result))
        return vec

    def to_dict(self) -> dict[str, Any]:
        return {
            "levels": [
                {
                    "name": lv.name,
                    "labels": list(lv.labels),
                    "children": {k: list(v) for k, v in lv.children.items()},
                }
                for lv in self.levels
            ]
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "LevelSchema":
        try:
            levels = tuple(
                Level(
                    name=entry["name"],
                    labels=tuple(entry["labels"]),
                    children={
                        k: tuple(v) for k, v in entry.get("children", {}).items()
                    },
                )
                for entry in payload["levels"]
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema payload: {exc}") from exc
        return cls(levels)


@dataclass(frozen=True)
class StateVector:
    """One hierarchical state: a label per level, coarse to fine."""

    labels: tuple[str, ...]
    schema_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))

    def to_dict(self) -> dict[str, Any]:
        return {"labels": list(self.labels), "schema_id": self.schema_id}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "StateVector":
        return cls(tuple(payload["labels"]), payload["schema_id"])


@dataclass(frozen=True)
class ValidationResult:
    """Outcome of a state validation: ok, or the first violated constraint."""

    ok: bool
    message: str | None = None
    level: int | None = None

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        return "ok" if self.ok else f"level {self.level}: {self.message}"


def validate_state(schema: LevelSchema, state: StateVector) -> ValidationResult:
    """Check a state against its schema.

    Returns a result value rather than raising: callers decide whether a
    violation is fatal.  The first failed constraint wins, scanning coarse
    to fine.
    """
    if state.schema_id and state.schema_id != schema.digest:
        return ValidationResult(False, "state references a different schema", None)
    if len(state.labels) != schema.depth:
        return ValidationResult(
            False,
            f"state has {len(state.labels)} labels, schema has {schema.depth} levels",
            None,
        )
    for pos, label in enumerate(state.labels, start=1):
        if label not in schema.labels_at(pos):
            return ValidationResult(
                False, f"label {label!r} not in level {pos} label set", pos
            )
    for pos in range(2, schema.depth + 1):
        parent = state.labels[pos - 2]
        if state.labels[pos - 1] not in schema.children_of(pos - 1, parent):
            return ValidationResult(
                False,
                f"containment violation: {state.labels[pos - 1]!r} is not a child "
                f"of {parent!r}",
                pos,
            )
    return ValidationResult(True)


@dataclass(frozen=True)
class TimeGrid:
    """Time discretization of one prediction run.

    ``n_steps`` is the number of incremental steps (ceil of duration over
    incremental scale); ``ratio`` is the number of incremental steps per
    scored step.  Steps are 1-based: step k covers the interval ending at
    k * incremental_scale seconds.
    """

    total_duration: float
    incremental_scale: float
    temporal_scale: float
    n_steps: int
    n_coarse_steps: int
    ratio: int

    def is_output_point(self, k: int) -> bool:
        """True iff 1-based step ``k`` is scored."""
        return 1 <= k <= self.n_steps and k % self.ratio == 0

    @property
    def n_output_points(self) -> int:
        return self.n_steps // self.ratio

    def to_dict(self) -> dict[str, Any]:
        return {
            "total_duration": self.total_duration,
            "incremental_scale": self.incremental_scale,
            "temporal_scale": self.temporal_scale,
            "n_steps": self.n_steps,
            "n_coarse_steps": self.n_coarse_steps,
            "ratio": self.ratio,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "TimeGrid":
        return make_time_grid(
            payload["total_duration"],
            payload["incremental_scale"],
            payload["temporal_scale"],
        )


def make_time_grid(
    total_duration: float, incremental_scale: float, temporal_scale: float
) -> TimeGrid:
    """Build a grid, deriving step counts and the scale ratio.

    Args:
        total_duration: horizon in seconds, positive.
        incremental_scale: internal step in seconds, positive; must divide
            the temporal scale exactly.
        temporal_scale: scoring interval in seconds, positive.

    Raises:
        NonPositiveDuration: any argument is zero or negative.
        NonDivisorScale: the incremental scale does not divide the temporal
            scale.
    """
    for name, value in (
        ("total_duration", total_duration),
        ("incremental_scale", incremental_scale),
        ("temporal_scale", temporal_scale),
    ):
        if not value > 0:
            raise NonPositiveDuration(f"{name} must be positive, got {value}")
    raw_ratio = temporal_scale / incremental_scale
    ratio = round(raw_ratio)
    if ratio < 1 or abs(raw_ratio - ratio) > _REL_TOL * max(1.0, raw_ratio):
        raise NonDivisorScale(
            f"incremental scale {incremental_scale} does not divide temporal "
            f"scale {temporal_scale}"
        )
    n_steps = _exact_ceil(total_duration / incremental_scale)
    n_coarse = _exact_ceil(total_duration / temporal_scale)
    return TimeGrid(
        total_duration=total_duration,
        incremental_scale=incremental_scale,
        temporal_scale=temporal_scale,
        n_steps=n_steps,
        n_coarse_steps=n_coarse,
        ratio=int(ratio),
    )


def output_points(grid: TimeGrid) -> list[int]:
    """All scored step indices of the grid, ascending."""
    return list(range(grid.ratio, grid.n_steps + 1, grid.ratio))
