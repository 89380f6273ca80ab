"""Independence product bound, joint-vs-product gap, and the accuracy
versus distribution-distance regression."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import DegenerateInput, EmptyInput, SchemaError


@dataclass(frozen=True)
class MarginalAccuracies:
    """Named per-component accuracies in percent."""

    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise EmptyInput("need at least one marginal accuracy")
        for name, value in self.entries:
            if not 0.0 <= value <= 100.0:
                raise SchemaError(f"accuracy {name}={value} outside [0, 100]")

    @classmethod
    def of(cls, *values: float) -> "MarginalAccuracies":
        return cls(tuple((f"m{i + 1}", v) for i, v in enumerate(values)))

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.entries)


def product_bound(m: MarginalAccuracies) -> float:
    """Joint accuracy in percent expected under independent failures."""
    pi = 1.0
    for value in m.values:
        pi *= value / 100.0
    return 100.0 * pi


def mc_gap(mc_accuracy: float, pi: float) -> float:
    """Measured joint accuracy minus the product bound, in points."""
    for name, value in (("mc_accuracy", mc_accuracy), ("pi", pi)):
        if not 0.0 <= value <= 100.0:
            raise SchemaError(f"{name}={value} outside [0, 100]")
    return mc_accuracy - pi


@dataclass(frozen=True)
class RegressionFit:
    """Least-squares fit in the form fid = intercept - slope * accuracy.

    ``t_stat`` is the two-sided t statistic for the Pearson correlation,
    r * sqrt((n - 2) / (1 - r^2)); it is +-inf for a perfect fit and nan
    when fewer than three points leave no degrees of freedom.
    """

    intercept: float
    slope: float
    pearson_r: float
    n: int
    t_stat: float


def fit_accuracy_fid(points: Sequence[tuple[float, float]]) -> RegressionFit:
    """Ordinary least squares of distribution distance on accuracy.

    Raises:
        EmptyInput: fewer than two points.
        DegenerateInput: accuracy never varies.
    """
    if len(points) < 2:
        raise EmptyInput("regression needs at least two points")
    xs = [float(x) for x, _ in points]
    ys = [float(y) for _, y in points]
    n = len(points)
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    sxx = sum((x - mean_x) ** 2 for x in xs)
    syy = sum((y - mean_y) ** 2 for y in ys)
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    if sxx == 0.0:
        raise DegenerateInput("accuracy column is constant")
    ols_slope = sxy / sxx
    intercept = mean_y - ols_slope * mean_x
    pearson_r = sxy / math.sqrt(sxx * syy) if syy > 0.0 else 0.0
    df = n - 2
    if abs(pearson_r) >= 1.0:
        t_stat = math.copysign(math.inf, pearson_r)
    elif df < 1:
        t_stat = math.nan
    else:
        t_stat = pearson_r * math.sqrt(df / (1.0 - pearson_r * pearson_r))
    return RegressionFit(
        intercept=intercept,
        slope=-ols_slope,
        pearson_r=pearson_r,
        n=n,
        t_stat=t_stat,
    )


def predicted_fid(fit: RegressionFit, accuracy: float) -> float:
    return fit.intercept - fit.slope * accuracy


def write_fit_series(
    points: Sequence[tuple[float, float]], fit: RegressionFit, path: str | Path
) -> None:
    """Plot-data CSV: observed and fitted values per accuracy."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["accuracy", "fid", "fitted"])
        for x, y in sorted(points):
            writer.writerow([repr(float(x)), repr(float(y)),
                             repr(predicted_fid(fit, x))])
