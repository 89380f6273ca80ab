"""On-disk formats for schemas and annotated sequences.

The schema file is one JSON object ``{"levels": [{"name", "labels",
"children"}]}``.  The sequence manifest is line-delimited JSON, one
sequence per line: ``{"sequence_id", "fps", "frames": [{"idx",
"image_path", "labels"}]}``.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

from .errors import ParseError, SchemaError
from .model import LevelSchema, StateVector, validate_state
from .sequences import AnnotatedSequence, Frame


def write_schema(schema: LevelSchema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n")


def read_schema(path: str | Path) -> LevelSchema:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"schema file {path}: {exc}") from exc
    return LevelSchema.from_dict(payload)


def _frame_record(frame: Frame) -> dict:
    return {
        "idx": frame.idx,
        "image_path": frame.image_path,
        "labels": list(frame.state.labels),
    }


def _frame_from_record(record: dict, schema_id: str) -> Frame:
    return Frame(
        idx=record["idx"],
        image_path=record.get("image_path"),
        state=StateVector(tuple(record["labels"]), schema_id),
    )


def write_sequences(seqs: Iterable[AnnotatedSequence], path: str | Path) -> None:
    with open(path, "w") as fh:
        for seq in seqs:
            record = {
                "sequence_id": seq.sequence_id,
                "fps": seq.fps,
                "frames": [_frame_record(f) for f in seq.frames],
            }
            fh.write(json.dumps(record) + "\n")


def read_sequences(path: str | Path, schema: LevelSchema) -> list[AnnotatedSequence]:
    """Parse a sequence manifest, validating every state against the schema.

    Raises:
        ParseError: malformed line, naming its 1-based line number.
        SchemaError: a state violates the schema, naming the sequence.
    """
    sequences: list[AnnotatedSequence] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                seq = AnnotatedSequence(
                    sequence_id=record["sequence_id"],
                    fps=record["fps"],
                    frames=tuple(
                        _frame_from_record(f, schema.digest)
                        for f in record["frames"]
                    ),
                )
            except SchemaError:
                raise
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad sequence record: {exc}", line=line_no) from exc
            for frame in seq.frames:
                result = validate_state(schema, frame.state)
                if not result:
                    raise SchemaError(
                        f"sequence {seq.sequence_id!r} frame {frame.idx}: {result}"
                    )
            sequences.append(seq)
    return sequences
