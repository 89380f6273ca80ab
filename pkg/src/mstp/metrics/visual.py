"""Image-quality metrics: PSNR, SSIM, and multi-scale SSIM.

SSIM uses a Gaussian window (11 taps, sigma 1.5 by default) slid over
valid positions only; stability constants are C1 = (0.01 MAX)^2 and
C2 = (0.03 MAX)^2.  The multi-scale variant averages contrast-structure
over five dyadic scales with the canonical weights, applying luminance
only at the coarsest scale.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionMismatch, TooSmallForScales
from ..images import ImageBuffer

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _require_same_shape(a: ImageBuffer, b: ImageBuffer) -> None:
    if not a.same_shape(b):
        raise DimensionMismatch(
            f"images differ in geometry: "
            f"{(a.height, a.width, a.channels, a.bit_depth)} vs "
            f"{(b.height, b.width, b.channels, b.bit_depth)}"
        )


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    _require_same_shape(a, b)
    diff = a.to_float() - b.to_float()
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(a.max_value**2 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    kernel = np.outer(taps, taps)
    return kernel / kernel.sum()


def _windowed_mean(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    size = kernel.shape[0]
    windows = np.lib.stride_tricks.sliding_window_view(plane, (size, size))
    return np.einsum("ijkl,kl->ij", windows, kernel)


def _ssim_planes(
    a: np.ndarray, b: np.ndarray, kernel: np.ndarray, c1: float, c2: float
) -> tuple[float, float]:
    """Mean SSIM and mean contrast-structure over one channel plane."""
    mu_a = _windowed_mean(a, kernel)
    mu_b = _windowed_mean(b, kernel)
    sigma_aa = _windowed_mean(a * a, kernel) - mu_a * mu_a
    sigma_bb = _windowed_mean(b * b, kernel) - mu_b * mu_b
    sigma_ab = _windowed_mean(a * b, kernel) - mu_a * mu_b
    luminance = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2.0 * sigma_ab + c2) / (sigma_aa + sigma_bb + c2)
    return float(np.mean(luminance * cs)), float(np.mean(cs))


def _as_planes(image: ImageBuffer) -> list[np.ndarray]:
    data = image.to_float()
    return [data[:, :, c] for c in range(image.channels)]


def ssim(
    a: ImageBuffer,
    b: ImageBuffer,
    window_size: int = 11,
    window_sigma: float = 1.5,
    c1: float | None = None,
    c2: float | None = None,
) -> float:
    """Mean local SSIM in [-1, 1]; channels are scored and averaged.

    Raises:
        DimensionMismatch: geometry differs.
        TooSmallForScales: the image cannot fit one window.
    """
    _require_same_shape(a, b)
    if min(a.height, a.width) < window_size:
        raise TooSmallForScales(
            f"image {a.height}x{a.width} cannot fit a {window_size}-tap window"
        )
    max_value = float(a.max_value)
    c1 = (0.01 * max_value) ** 2 if c1 is None else c1
    c2 = (0.03 * max_value) ** 2 if c2 is None else c2
    kernel = _gaussian_kernel(window_size, window_sigma)
    values = [
        _ssim_planes(pa, pb, kernel, c1, c2)[0]
        for pa, pb in zip(_as_planes(a), _as_planes(b))
    ]
    return float(np.mean(values))


def _downsample(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    h2, w2 = h // 2, w // 2
    return plane[: h2 * 2, : w2 * 2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def ms_ssim(
    a: ImageBuffer,
    b: ImageBuffer,
    weights: tuple[float, ...] = MS_SSIM_WEIGHTS,
    window_size: int = 11,
    window_sigma: float = 1.5,
) -> float:
    """Multi-scale SSIM in [0, 1] over ``len(weights)`` dyadic scales.

    Raises:
        DimensionMismatch: geometry differs.
        TooSmallForScales: too small for the requested scale count.
    """
    _require_same_shape(a, b)
    scales = len(weights)
    if min(a.height, a.width) // (2 ** (scales - 1)) < window_size:
        raise TooSmallForScales(
            f"image {a.height}x{a.width} cannot support {scales} dyadic scales "
            f"with a {window_size}-tap window"
        )
    max_value = float(a.max_value)
    c1 = (0.01 * max_value) ** 2
    c2 = (0.03 * max_value) ** 2
    kernel = _gaussian_kernel(window_size, window_sigma)
    planes_a = _as_planes(a)
    planes_b = _as_planes(b)
    result = 1.0
    for scale in range(scales):
        ssim_vals = []
        cs_vals = []
        for pa, pb in zip(planes_a, planes_b):
            full, cs = _ssim_planes(pa, pb, kernel, c1, c2)
            ssim_vals.append(full)
            cs_vals.append(cs)
        # negative local means are clamped so the weighted geometric
        # product stays real and in range
        if scale == scales - 1:
            factor = max(float(np.mean(ssim_vals)), 0.0)
        else:
            factor = max(float(np.mean(cs_vals)), 0.0)
        result *= factor ** weights[scale]
        planes_a = [_downsample(p) for p in planes_a]
        planes_b = [_downsample(p) for p in planes_b]
    return min(max(result, 0.0), 1.0)
