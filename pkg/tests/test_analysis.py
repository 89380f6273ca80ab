"""Product bound, collaboration gap, and the accuracy-vs-FID regression."""
from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from mstp.analysis import (
    MarginalAccuracies,
    RegressionFit,
    fit_accuracy_fid,
    mc_gap,
    predicted_fid,
    product_bound,
    write_fit_series,
)
from mstp.errors import DegenerateInput, EmptyInput, SchemaError

CUMULATIVE_ERROR_ROWS = [
    # (stc, phase, step, expected product, measured joint, expected gap)
    ((57.1, 51.9, 49.9), 14.8, 44.8, 30.0),
    ((55.4, 43.8, 58.5), 14.2, 40.6, 26.4),
    ((54.9, 33.2, 58.8), 10.7, 36.2, 25.5),
]


def test_product_bound_reference_rows() -> None:
    for marginals, pi_expected, mc, gap_expected in CUMULATIVE_ERROR_ROWS:
        pi = product_bound(MarginalAccuracies.of(*marginals))
        assert pi == pytest.approx(pi_expected, abs=0.05)
        assert round(mc_gap(mc, pi), 1) == gap_expected


def test_product_bound_matches_numpy_product() -> None:
    rng = np.random.default_rng(0)
    for _ in range(50):
        values = rng.uniform(0.0, 100.0, size=int(rng.integers(1, 6)))
        pi = product_bound(MarginalAccuracies.of(*values))
        assert pi == pytest.approx(100.0 * np.prod(values / 100.0), rel=1e-12)


def test_marginal_accuracies_validation() -> None:
    named = MarginalAccuracies((("stc", 57.1), ("phase", 51.9)))
    assert named.values == (57.1, 51.9)
    assert MarginalAccuracies.of(1.0, 2.0).entries[0][0] == "m1"
    with pytest.raises(EmptyInput):
        MarginalAccuracies(())
    with pytest.raises(SchemaError):
        MarginalAccuracies.of(101.0)
    with pytest.raises(SchemaError):
        MarginalAccuracies.of(-0.1)
    with pytest.raises(SchemaError):
        mc_gap(120.0, 10.0)
    with pytest.raises(SchemaError):
        mc_gap(10.0, -1.0)


def test_fit_recovers_planted_line_exactly() -> None:
    points = [(float(x), 100.0 - 2.0 * x) for x in range(10, 100, 10)]
    fit = fit_accuracy_fid(points)
    assert fit.intercept == pytest.approx(100.0, abs=1e-12)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.pearson_r == -1.0
    assert fit.t_stat == -math.inf
    assert fit.n == len(points)
    for x, y in points:
        assert abs(predicted_fid(fit, x) - y) < 1e-9


def test_fit_matches_polyfit_and_corrcoef() -> None:
    rng = np.random.default_rng(1)
    for _ in range(25):
        n = int(rng.integers(3, 60))
        xs = rng.uniform(0, 100, size=n)
        ys = 80.0 - 1.5 * xs + rng.normal(scale=5.0, size=n)
        fit = fit_accuracy_fid(list(zip(xs, ys)))
        ols_slope, intercept = np.polyfit(xs, ys, deg=1)
        assert fit.slope == pytest.approx(-ols_slope, rel=1e-9)
        assert fit.intercept == pytest.approx(intercept, rel=1e-9)
        r = np.corrcoef(xs, ys)[0, 1]
        assert fit.pearson_r == pytest.approx(r, rel=1e-9)
        want_t = r * math.sqrt((n - 2) / (1.0 - r * r))
        assert fit.t_stat == pytest.approx(want_t, rel=1e-9)


def test_fit_two_point_pattern_has_negative_r() -> None:
    fit = fit_accuracy_fid([(43.3, 70.63), (40.58, 94.82)])
    assert fit.pearson_r < 0
    assert fit.slope > 0
    assert fit.n == 2


def test_fit_degenerate_inputs() -> None:
    with pytest.raises(EmptyInput):
        fit_accuracy_fid([(1.0, 2.0)])
    with pytest.raises(DegenerateInput):
        fit_accuracy_fid([(5.0, 1.0), (5.0, 2.0)])
    flat = fit_accuracy_fid([(1.0, 5.0), (2.0, 5.0)])
    assert flat.pearson_r == 0.0
    assert flat.slope == 0.0
    assert math.isnan(flat.t_stat)


def test_t_stat_sign_tracks_correlation() -> None:
    rising = fit_accuracy_fid([(0.0, 0.0), (1.0, 1.1), (2.0, 1.9), (3.0, 3.2)])
    assert rising.pearson_r > 0 and rising.t_stat > 0
    falling = fit_accuracy_fid([(0.0, 3.0), (1.0, 2.1), (2.0, 0.9), (3.0, 0.2)])
    assert falling.pearson_r < 0 and falling.t_stat < 0


def test_write_fit_series_contents(tmp_path) -> None:
    points = [(30.0, 40.0), (10.0, 80.0), (20.0, 61.0)]
    fit = fit_accuracy_fid(points)
    path = tmp_path / "fit.csv"
    write_fit_series(points, fit, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["accuracy", "fid", "fitted"]
    assert [float(r[0]) for r in rows[1:]] == [10.0, 20.0, 30.0]
    for row in rows[1:]:
        assert float(row[2]) == pytest.approx(
            predicted_fid(fit, float(row[0])), abs=1e-12
        )


def test_predicted_fid_uses_sign_convention() -> None:
    fit = RegressionFit(intercept=100.0, slope=2.0, pearson_r=-1.0, n=5,
                        t_stat=-math.inf)
    assert predicted_fid(fit, 25.0) == 50.0
