"""Tabular metric reports with the fixed column order metric, class, value."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

from .state import StateMetricsReport

MACRO_CLASS = "macro"
ALL_CLASS = "all"


def report_rows(
    report: StateMetricsReport, prefix: str = ""
) -> list[tuple[str, str, float]]:
    """Flatten a state metrics report into (metric, class, value) rows."""
    tag = f"{prefix}_" if prefix else ""
    rows: list[tuple[str, str, float]] = [
        (f"{tag}accuracy", ALL_CLASS, report.accuracy)
    ]
    for name in ("precision", "recall", "f1", "jaccard"):
        for cls in report.classes:
            rows.append((f"{tag}{name}", cls, getattr(report.per_class[cls], name)))
        rows.append((f"{tag}{name}", MACRO_CLASS, getattr(report.macro, name)))
    return rows


def write_report(rows: Iterable[tuple[str, str, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "class", "value"])
        for metric, cls, value in rows:
            writer.writerow([metric, cls, repr(float(value))])


def read_report(path: str | Path) -> list[tuple[str, str, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["metric", "class", "value"]:
            raise ValueError(f"unexpected report header {header}")
        return [(metric, cls, float(value)) for metric, cls, value in reader]
