"""Feature-space metrics against brute-force and closed-form oracles."""
from __future__ import annotations

import numpy as np
import pytest

from mstp.errors import (
    DegenerateCovariance,
    DimensionMismatch,
    EmptyInput,
    EmptyRanking,
    ShapeMismatch,
    ZeroVector,
)
from mstp.metrics.features import (
    ActivationBlock,
    FeatureSet,
    clipscore,
    fid,
    kid,
    lpips,
    r_precision,
    read_feature_set,
    write_feature_set,
)


def oracle_fid(x: np.ndarray, y: np.ndarray) -> float:
    """Frechet distance from sample moments via the product-eigenvalue
    identity tr((S2^1/2 S1 S2^1/2)^1/2) = sum sqrt(eig(S1 S2))."""
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    s_x = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    s_y = np.atleast_2d(np.cov(y, rowvar=False, ddof=1))
    eigs = np.linalg.eigvals(s_x @ s_y)
    trace_cross = np.sqrt(np.clip(eigs.real, 0.0, None)).sum()
    delta = mu_x - mu_y
    return float(delta @ delta + np.trace(s_x) + np.trace(s_y) - 2.0 * trace_cross)


def oracle_kid(x: np.ndarray, y: np.ndarray) -> float:
    """Unbiased squared MMD with scalar triple loops."""
    d = x.shape[1]
    k = lambda u, v: (float(u @ v) / d + 1.0) ** 3
    n, m = len(x), len(y)
    xx = sum(k(x[i], x[j]) for i in range(n) for j in range(n) if i != j)
    yy = sum(k(y[i], y[j]) for i in range(m) for j in range(m) if i != j)
    xy = sum(k(x[i], y[j]) for i in range(n) for j in range(m))
    return xx / (n * (n - 1)) + yy / (m * (m - 1)) - 2.0 * xy / (n * m)


def oracle_lpips(a_blocks, b_blocks, weights):
    total = 0.0
    for block_a, block_b, weight in zip(a_blocks, b_blocks, weights):
        va, vb = block_a.values, block_b.values
        _, h, w = va.shape
        acc = 0.0
        for i in range(h):
            for j in range(w):
                ca = va[:, i, j]
                cb = vb[:, i, j]
                ua = ca / max(float(np.linalg.norm(ca)), 1e-12)
                ub = cb / max(float(np.linalg.norm(cb)), 1e-12)
                acc += float(((ua - ub) ** 2).sum())
        total += weight * acc / (h * w)
    return total


# ---------------------------------------------------------------------------
# FID
# ---------------------------------------------------------------------------

def test_fid_identical_sets_is_zero() -> None:
    rng = np.random.default_rng(0)
    data = rng.normal(size=(200, 8))
    assert fid(FeatureSet(data), FeatureSet(data.copy())) <= 1e-6


def test_fid_pure_mean_shift_is_squared_norm() -> None:
    rng = np.random.default_rng(1)
    base = rng.normal(size=(300, 6))
    mu = np.array([0.5, -1.0, 0.0, 2.0, 0.25, -0.75])
    value = fid(FeatureSet(base), FeatureSet(base + mu))
    assert value == pytest.approx(float(mu @ mu), rel=1e-9)


def test_fid_one_dimensional_closed_form() -> None:
    rng = np.random.default_rng(2)
    x = rng.normal(loc=1.0, scale=2.0, size=(400, 1))
    y = rng.normal(loc=-0.5, scale=0.7, size=(300, 1))
    want = (x.mean() - y.mean()) ** 2 + (x.std(ddof=1) - y.std(ddof=1)) ** 2
    assert fid(FeatureSet(x), FeatureSet(y)) == pytest.approx(float(want), rel=1e-12)


def test_fid_matches_product_eigenvalue_oracle() -> None:
    rng = np.random.default_rng(3)
    for _ in range(20):
        d = int(rng.integers(2, 10))
        x = rng.normal(size=(int(rng.integers(d + 2, 80)), d))
        y = 0.3 + 1.7 * rng.normal(size=(int(rng.integers(d + 2, 80)), d))
        assert fid(FeatureSet(x), FeatureSet(y)) == pytest.approx(
            oracle_fid(x, y), rel=1e-8, abs=1e-10
        )


def test_fid_warns_on_degenerate_covariance() -> None:
    rng = np.random.default_rng(0)
    gen = FeatureSet(rng.normal(size=(3, 6)) * 1e8)
    real = FeatureSet(rng.normal(size=(50, 6)))
    with pytest.warns(DegenerateCovariance):
        value = fid(real, gen)
    assert np.isfinite(value) and value >= 0.0


def test_fid_input_validation() -> None:
    rng = np.random.default_rng(4)
    with pytest.raises(DimensionMismatch):
        fid(FeatureSet(rng.normal(size=(10, 3))), FeatureSet(rng.normal(size=(10, 4))))
    with pytest.raises(DimensionMismatch):
        fid(FeatureSet(rng.normal(size=(1, 3))), FeatureSet(rng.normal(size=(10, 3))))
    with pytest.raises(DimensionMismatch):
        FeatureSet(rng.normal(size=(10,)))
    with pytest.raises(DimensionMismatch):
        FeatureSet(np.array([[1.0, np.inf]]))


# ---------------------------------------------------------------------------
# KID
# ---------------------------------------------------------------------------

def test_kid_matches_brute_force() -> None:
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 3))
    y = rng.normal(size=(5, 3))
    assert kid(FeatureSet(x), FeatureSet(y)) == pytest.approx(
        oracle_kid(x, y), rel=1e-12
    )


def test_kid_self_split_near_zero() -> None:
    """Across independent splits of one pool, the unbiased estimator's mean
    sits within three standard errors of zero."""
    rng = np.random.default_rng(6)
    values = []
    for _ in range(24):
        pool = rng.normal(size=(240, 6))
        values.append(kid(FeatureSet(pool[:120]), FeatureSet(pool[120:])))
    values = np.array(values)
    se = values.std(ddof=1) / np.sqrt(len(values))
    assert abs(values.mean()) <= 3.0 * se


def test_kid_detects_scale_mismatch() -> None:
    rng = np.random.default_rng(7)
    x = rng.normal(size=(200, 4))
    y = 3.0 * rng.normal(size=(200, 4))
    assert kid(FeatureSet(x), FeatureSet(y)) > 10 * abs(
        kid(FeatureSet(x), FeatureSet(rng.normal(size=(200, 4))))
    )


# ---------------------------------------------------------------------------
# LPIPS
# ---------------------------------------------------------------------------

def blocks_from(rng, shapes):
    return tuple(
        ActivationBlock(layer=f"conv{i}", values=rng.normal(size=shape))
        for i, shape in enumerate(shapes)
    )


def test_lpips_self_is_zero() -> None:
    rng = np.random.default_rng(8)
    acts = blocks_from(rng, [(4, 5, 5), (8, 3, 3)])
    assert lpips(acts, acts) == 0.0


def test_lpips_matches_double_loop_oracle() -> None:
    rng = np.random.default_rng(9)
    shapes = [(3, 6, 7), (5, 4, 4), (2, 2, 3)]
    a = blocks_from(rng, shapes)
    b = blocks_from(rng, shapes)
    weights = [1.0, 0.5, 2.0]
    assert lpips(a, b, weights) == pytest.approx(
        oracle_lpips(a, b, weights), abs=1e-9
    )
    assert lpips(a, b) == pytest.approx(
        oracle_lpips(a, b, [1.0, 1.0, 1.0]), abs=1e-9
    )


def test_lpips_zero_cells_stay_finite() -> None:
    zero = ActivationBlock("conv0", np.zeros((4, 2, 2)))
    ones = ActivationBlock("conv0", np.ones((4, 2, 2)))
    value = lpips([zero], [ones])
    assert value == pytest.approx(1.0, abs=1e-12)
    assert lpips([zero], [zero]) == 0.0


def test_lpips_validation() -> None:
    rng = np.random.default_rng(10)
    a = blocks_from(rng, [(2, 2, 2)])
    b = blocks_from(rng, [(2, 2, 2), (2, 2, 2)])
    with pytest.raises(ShapeMismatch, match="depth"):
        lpips(a, b)
    with pytest.raises(EmptyInput):
        lpips([], [])
    renamed = (ActivationBlock("other", a[0].values),)
    with pytest.raises(ShapeMismatch, match="layer mismatch"):
        lpips(a, renamed)
    reshaped = (ActivationBlock("conv0", rng.normal(size=(2, 3, 2))),)
    with pytest.raises(ShapeMismatch, match="shapes differ"):
        lpips(a, reshaped)
    with pytest.raises(ShapeMismatch, match="weight"):
        lpips(a, a, weights=[1.0, 2.0])
    with pytest.raises(ShapeMismatch, match="\\(C, H, W\\)"):
        ActivationBlock("conv0", np.zeros((2, 2)))


# ---------------------------------------------------------------------------
# embedding metrics
# ---------------------------------------------------------------------------

def test_clipscore_cosine_and_clamp() -> None:
    image = np.array([1.0, 0.0])
    aligned = np.array([2.0, 0.0])
    angled = np.array([1.0, 1.0])
    opposed = np.array([-3.0, 0.0])
    assert clipscore(image, aligned) == pytest.approx(100.0)
    assert clipscore(image, angled) == pytest.approx(100.0 / np.sqrt(2), rel=1e-12)
    assert clipscore(image, opposed) == 0.0
    with pytest.raises(DimensionMismatch):
        clipscore(np.ones(3), np.ones(4))
    with pytest.raises(ZeroVector):
        clipscore(np.zeros(3), np.ones(3))


def test_r_precision_cases() -> None:
    ranked = ["a", "b", "c", "d"]
    assert r_precision(ranked, {"a"}, r=1) == 1.0
    assert r_precision(ranked, {"b"}, r=1) == 0.0
    assert r_precision(ranked, {"a", "c"}, r=2) == 0.5
    assert r_precision(ranked, {"a"}, r=3) == 1.0
    with pytest.raises(EmptyRanking):
        r_precision([], {"a"})
    with pytest.raises(EmptyRanking):
        r_precision(ranked, {"a"}, r=0)
    with pytest.raises(EmptyInput):
        r_precision(ranked, set())


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------

def test_feature_file_round_trip(tmp_path) -> None:
    rng = np.random.default_rng(11)
    fs = FeatureSet(
        features=rng.normal(size=(7, 4)),
        label="real",
        activations=blocks_from(rng, [(3, 2, 4), (2, 3, 3)]),
    )
    path = tmp_path / "features.txt"
    write_feature_set(fs, path)
    again = read_feature_set(path, label="real")
    assert again.label == "real"
    assert np.array_equal(again.features, fs.features)
    assert len(again.activations) == 2
    for orig, back in zip(fs.activations, again.activations):
        assert back.layer == orig.layer
        assert np.array_equal(back.values, orig.values)


def test_feature_file_empty_rejected(tmp_path) -> None:
    path = tmp_path / "empty.txt"
    path.write_text("")
    with pytest.raises(EmptyInput):
        read_feature_set(path)
