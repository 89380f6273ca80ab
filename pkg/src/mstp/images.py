"""Raster image buffers and lossless PNG/PPM adapters.

Buffers are immutable row-major arrays of unsigned integers, 1 or 3
channels, 8 or 16 bits per sample.  No video decoding happens here; frames
are referenced by path and loaded on demand.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DimensionMismatch, SchemaError


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """One immutable image.

    ``pixels`` is shaped (height, width, channels) with dtype uint8 or
    uint16 matching ``bit_depth``.  Values never exceed ``max_value``.
    """

    width: int
    height: int
    channels: int
    bit_depth: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.channels not in (1, 3):
            raise SchemaError(f"channels must be 1 or 3, got {self.channels}")
        if self.bit_depth not in (8, 16):
            raise SchemaError(f"bit_depth must be 8 or 16, got {self.bit_depth}")
        expected_dtype = np.uint8 if self.bit_depth == 8 else np.uint16
        arr = np.ascontiguousarray(self.pixels, dtype=expected_dtype)
        if arr.shape != (self.height, self.width, self.channels):
            raise DimensionMismatch(
                f"pixel array shape {arr.shape} does not match "
                f"(h={self.height}, w={self.width}, c={self.channels})"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1

    def same_shape(self, other: "ImageBuffer") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.channels == other.channels
            and self.bit_depth == other.bit_depth
        )

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def to_float(self) -> np.ndarray:
        """Pixel data as float64, same shape."""
        return self.pixels.astype(np.float64)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.same_shape(other) and self.tobytes() == other.tobytes()

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def from_array(cls, arr: np.ndarray, bit_depth: int = 8) -> "ImageBuffer":
        """Wrap a (h, w) or (h, w, c) integer array."""
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise DimensionMismatch(f"expected 2 or 3 dims, got {arr.ndim}")
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, bit_depth=bit_depth, pixels=arr)

    @classmethod
    def filled(
        cls, width: int, height: int, channels: int = 1, value: int = 0,
        bit_depth: int = 8,
    ) -> "ImageBuffer":
        dtype = np.uint8 if bit_depth == 8 else np.uint16
        arr = np.full((height, width, channels), value, dtype=dtype)
        return cls(width, height, channels, bit_depth, arr)


def add_uniform_noise(
    image: ImageBuffer, amplitude: float, rng: np.random.Generator
) -> ImageBuffer:
    """Add uniform noise in [-amplitude, +amplitude], round, clamp to range.

    Amplitude 0 returns a buffer byte-identical to the input.
    """
    if amplitude < 0:
        raise SchemaError(f"noise amplitude must be non-negative, got {amplitude}")
    if amplitude == 0:
        return image
    noisy = image.to_float() + rng.uniform(-amplitude, amplitude, image.pixels.shape)
    clamped = np.clip(np.rint(noisy), 0, image.max_value)
    return ImageBuffer(
        image.width, image.height, image.channels, image.bit_depth,
        clamped.astype(image.pixels.dtype),
    )


def _to_pil(image: ImageBuffer) -> Image.Image:
    if image.bit_depth == 16:
        if image.channels != 1:
            raise SchemaError("16-bit buffers support a single channel only")
        return Image.fromarray(image.pixels[:, :, 0])
    if image.channels == 1:
        return Image.fromarray(image.pixels[:, :, 0], mode="L")
    return Image.fromarray(image.pixels, mode="RGB")


def _from_pil(img: Image.Image) -> ImageBuffer:
    if img.mode == "I;16":
        arr = np.array(img, dtype=np.uint16)
        return ImageBuffer.from_array(arr, bit_depth=16)
    if img.mode == "L":
        return ImageBuffer.from_array(np.array(img, dtype=np.uint8))
    if img.mode != "RGB":
        img = img.convert("RGB")
    return ImageBuffer.from_array(np.array(img, dtype=np.uint8))


def save_image(image: ImageBuffer, path: str) -> None:
    """Write a buffer to disk; the format follows the file extension."""
    _to_pil(image).save(path)


def load_image(path: str) -> ImageBuffer:
    """Load a raster file (PNG, PPM, ...) into a buffer."""
    with Image.open(path) as img:
        return _from_pil(img)


def encode_png(image: ImageBuffer) -> bytes:
    """Encode a buffer as PNG bytes (the wire format for images)."""
    out = io.BytesIO()
    _to_pil(image).save(out, format="PNG")
    return out.getvalue()


def decode_png(data: bytes) -> ImageBuffer:
    """Decode PNG bytes produced by :func:`encode_png` or any PNG writer."""
    with Image.open(io.BytesIO(data)) as img:
        img.load()
        return _from_pil(img)
