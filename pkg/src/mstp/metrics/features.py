"""Distributional and perceptual metrics over externally supplied features.

No feature extraction happens here: callers provide feature matrices,
per-layer activation blocks, or embedding vectors from whatever network
they trust, and these functions score them.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import (
    DegenerateCovariance,
    DimensionMismatch,
    EmptyInput,
    EmptyRanking,
    ShapeMismatch,
    ZeroVector,
)

_EIG_TOL = -1e-8
_NORM_EPS = 1e-12


@dataclass(frozen=True)
class ActivationBlock:
    """One layer's activations, shaped (channels, height, width)."""

    layer: str
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeMismatch(
                f"layer {self.layer!r} activations must be (C, H, W), "
                f"got shape {arr.shape}"
            )
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class FeatureSet:
    """n feature vectors of dimension d, with optional activation blocks."""

    features: np.ndarray
    label: str = ""
    activations: tuple[ActivationBlock, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        arr = np.asarray(self.features, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatch(f"features must be (n, d), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DimensionMismatch("features must be finite")
        object.__setattr__(self, "features", arr)
        object.__setattr__(self, "activations", tuple(self.activations))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def _check_pair(real: FeatureSet, gen: FeatureSet, minimum: int) -> None:
    if real.d != gen.d:
        raise DimensionMismatch(
            f"feature dimensions differ: {real.d} vs {gen.d}"
        )
    if real.n < minimum or gen.n < minimum:
        raise DimensionMismatch(
            f"need at least {minimum} vectors per side, got {real.n} and {gen.n}"
        )


def _psd_sqrt(matrix: np.ndarray, what: str) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition with clamping."""
    eigenvalues, eigenvectors = np.linalg.eigh((matrix + matrix.T) / 2.0)
    if eigenvalues.min() < _EIG_TOL:
        warnings.warn(
            f"{what} has eigenvalue {eigenvalues.min():.3e} below tolerance; "
            f"clamping to zero",
            DegenerateCovariance,
            stacklevel=3,
        )
    clamped = np.clip(eigenvalues, 0.0, None)
    return (eigenvectors * np.sqrt(clamped)) @ eigenvectors.T


def fid(real: FeatureSet, gen: FeatureSet) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    Covariances use the unbiased (n-1) estimator; the cross square root is
    computed via the symmetric form sqrt(Sg) Sr sqrt(Sg), whose tiny
    negative eigenvalues are clamped to zero (warning past -1e-8).
    """
    _check_pair(real, gen, minimum=2)
    mu_r = real.features.mean(axis=0)
    mu_g = gen.features.mean(axis=0)
    sigma_r = np.cov(real.features, rowvar=False, ddof=1)
    sigma_g = np.cov(gen.features, rowvar=False, ddof=1)
    sigma_r = np.atleast_2d(sigma_r)
    sigma_g = np.atleast_2d(sigma_g)
    root_g = _psd_sqrt(sigma_g, "generated covariance")
    cross = root_g @ sigma_r @ root_g
    cross_eigs, _ = np.linalg.eigh((cross + cross.T) / 2.0)
    if cross_eigs.min() < _EIG_TOL:
        warnings.warn(
            f"cross covariance has eigenvalue {cross_eigs.min():.3e} below "
            f"tolerance; clamping to zero",
            DegenerateCovariance,
            stacklevel=2,
        )
    trace_cross = float(np.sqrt(np.clip(cross_eigs, 0.0, None)).sum())
    delta = mu_r - mu_g
    value = float(delta @ delta) + float(
        np.trace(sigma_r) + np.trace(sigma_g) - 2.0 * trace_cross
    )
    return max(value, 0.0)


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def kid(real: FeatureSet, gen: FeatureSet) -> float:
    """Unbiased squared MMD with the cubic kernel (x.y/d + 1)^3.

    Same-set expectations exclude diagonal terms, so identical sets score
    approximately zero rather than positively.
    """
    _check_pair(real, gen, minimum=2)
    x = real.features
    y = gen.features
    n, m = x.shape[0], y.shape[0]
    k_xx = _poly_kernel(x, x)
    k_yy = _poly_kernel(y, y)
    k_xy = _poly_kernel(x, y)
    term_x = (k_xx.sum() - np.trace(k_xx)) / (n * (n - 1))
    term_y = (k_yy.sum() - np.trace(k_yy)) / (m * (m - 1))
    term_xy = 2.0 * k_xy.mean()
    return float(term_x + term_y - term_xy)


def _unit_normalize(block: np.ndarray) -> np.ndarray:
    norms = np.sqrt((block * block).sum(axis=0, keepdims=True))
    return block / np.maximum(norms, _NORM_EPS)


def lpips(
    a_acts: Sequence[ActivationBlock],
    b_acts: Sequence[ActivationBlock],
    weights: Sequence[float] | None = None,
) -> float:
    """Perceptual distance over per-layer activations.

    Channel vectors are unit-normalized at each spatial cell; each layer
    contributes the spatial mean of squared normalized differences, scaled
    by its weight (default 1).
    """
    if len(a_acts) != len(b_acts):
        raise ShapeMismatch(
            f"activation stacks differ in depth: {len(a_acts)} vs {len(b_acts)}"
        )
    if not a_acts:
        raise EmptyInput("activation stacks are empty")
    if weights is None:
        weights = [1.0] * len(a_acts)
    if len(weights) != len(a_acts):
        raise ShapeMismatch("one weight per layer required")
    total = 0.0
    for block_a, block_b, weight in zip(a_acts, b_acts, weights):
        if block_a.layer != block_b.layer:
            raise ShapeMismatch(
                f"layer mismatch: {block_a.layer!r} vs {block_b.layer!r}"
            )
        if block_a.values.shape != block_b.values.shape:
            raise ShapeMismatch(
                f"layer {block_a.layer!r} shapes differ: "
                f"{block_a.values.shape} vs {block_b.values.shape}"
            )
        na = _unit_normalize(block_a.values)
        nb = _unit_normalize(block_b.values)
        diff = na - nb
        _, h, w = diff.shape
        total += weight * float((diff * diff).sum()) / (h * w)
    return total


def clipscore(image_emb: np.ndarray, text_emb: np.ndarray) -> float:
    """Semantic alignment: 100 times cosine similarity, clamped at 0."""
    image_emb = np.asarray(image_emb, dtype=np.float64).ravel()
    text_emb = np.asarray(text_emb, dtype=np.float64).ravel()
    if image_emb.shape != text_emb.shape:
        raise DimensionMismatch(
            f"embedding dims differ: {image_emb.shape} vs {text_emb.shape}"
        )
    norm_i = float(np.linalg.norm(image_emb))
    norm_t = float(np.linalg.norm(text_emb))
    if norm_i == 0.0 or norm_t == 0.0:
        raise ZeroVector("embeddings must have nonzero norm")
    cosine = float(image_emb @ text_emb) / (norm_i * norm_t)
    return max(100.0 * cosine, 0.0)


def r_precision(
    ranked_ids: Sequence[str], relevant_ids: set[str], r: int = 1
) -> float:
    """Share of the relevant set retrieved within the top R ranks."""
    if r < 1:
        raise EmptyRanking(f"R must be at least 1, got {r}")
    if not ranked_ids:
        raise EmptyRanking("ranking is empty")
    if not relevant_ids:
        raise EmptyInput("relevant set is empty")
    top = set(ranked_ids[:r])
    return len(top & set(relevant_ids)) / min(r, len(relevant_ids))


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------

def write_feature_set(fs: FeatureSet, path: str | Path) -> None:
    """Text format: a JSON header line {n, d}, then one row per line;
    each activation block adds a {layer, C, H, W} header followed by H*W
    lines of C values."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"n": fs.n, "d": fs.d}) + "\n")
        for row in fs.features:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        for block in fs.activations:
            c, h, w = block.values.shape
            fh.write(json.dumps({"layer": block.layer, "C": c, "H": h, "W": w}) + "\n")
            flat = block.values.reshape(c, h * w).T
            for cell in flat:
                fh.write(" ".join(repr(float(v)) for v in cell) + "\n")


def read_feature_set(path: str | Path, label: str = "") -> FeatureSet:
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines:
        raise EmptyInput(f"feature file {path} is empty")
    header = json.loads(lines[0])
    n, d = header["n"], header["d"]
    rows = [
        [float(tok) for tok in line.split()] for line in lines[1 : 1 + n]
    ]
    features = np.array(rows, dtype=np.float64).reshape(n, d)
    blocks: list[ActivationBlock] = []
    cursor = 1 + n
    while cursor < len(lines):
        if not lines[cursor].strip():
            cursor += 1
            continue
        block_header = json.loads(lines[cursor])
        c, h, w = block_header["C"], block_header["H"], block_header["W"]
        cells = [
            [float(tok) for tok in line.split()]
            for line in lines[cursor + 1 : cursor + 1 + h * w]
        ]
        values = np.array(cells, dtype=np.float64).T.reshape(c, h, w)
        blocks.append(ActivationBlock(layer=block_header["layer"], values=values))
        cursor += 1 + h * w
    return FeatureSet(features=features, label=label, activations=tuple(blocks))
