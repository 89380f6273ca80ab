"""Image buffer semantics, noise injection, and PNG round-trips."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mstp.errors import DimensionMismatch, SchemaError
from mstp.images import (
    ImageBuffer,
    add_uniform_noise,
    decode_png,
    encode_png,
    load_image,
    save_image,
)

from _synth import random_image


def test_from_array_promotes_two_dims() -> None:
    img = ImageBuffer.from_array(np.zeros((4, 6), dtype=np.uint8))
    assert (img.height, img.width, img.channels) == (4, 6, 1)
    assert img.max_value == 255


def test_from_array_rejects_bad_rank() -> None:
    with pytest.raises(DimensionMismatch):
        ImageBuffer.from_array(np.zeros((2, 2, 1, 1), dtype=np.uint8))


def test_channel_and_depth_constraints() -> None:
    with pytest.raises(SchemaError):
        ImageBuffer.filled(2, 2, channels=2)
    with pytest.raises(SchemaError):
        ImageBuffer(2, 2, 1, 12, np.zeros((2, 2, 1), dtype=np.uint8))


def test_pixels_are_read_only() -> None:
    img = ImageBuffer.filled(3, 3, value=7)
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1


def test_equality_is_bytewise() -> None:
    rng = np.random.default_rng(0)
    a = random_image(rng, 5, 5)
    b = ImageBuffer.from_array(a.pixels.copy())
    assert a == b
    flipped = a.pixels.copy()
    flipped[0, 0, 0] ^= 0xFF
    assert a != ImageBuffer.from_array(flipped)
    assert a != ImageBuffer.filled(5, 4, value=0)


def test_zero_noise_returns_same_object() -> None:
    img = ImageBuffer.filled(4, 4, value=9)
    assert add_uniform_noise(img, 0.0, np.random.default_rng(1)) is img


def test_noise_is_bounded_rounded_and_seeded() -> None:
    img = ImageBuffer.filled(16, 16, value=128)
    first = add_uniform_noise(img, 4.0, np.random.default_rng(3))
    again = add_uniform_noise(img, 4.0, np.random.default_rng(3))
    other = add_uniform_noise(img, 4.0, np.random.default_rng(4))
    assert first == again
    assert first != other
    diff = first.to_float() - img.to_float()
    assert np.abs(diff).max() <= 4.0
    assert np.all(diff == np.rint(diff))


def test_noise_clamps_at_range_edges() -> None:
    low = ImageBuffer.filled(8, 8, value=0)
    high = ImageBuffer.filled(8, 8, value=255)
    noisy_low = add_uniform_noise(low, 10.0, np.random.default_rng(5))
    noisy_high = add_uniform_noise(high, 10.0, np.random.default_rng(5))
    assert noisy_low.pixels.min() >= 0
    assert noisy_high.pixels.max() <= 255


def test_negative_amplitude_rejected() -> None:
    with pytest.raises(SchemaError):
        add_uniform_noise(ImageBuffer.filled(2, 2), -1.0, np.random.default_rng(0))


@settings(max_examples=25)
@given(
    seed=st.integers(min_value=0, max_value=2**32 - 1),
    channels=st.sampled_from([1, 3]),
    depth=st.sampled_from([8, 16]),
)
def test_png_round_trip_is_lossless(seed: int, channels: int, depth: int) -> None:
    rng = np.random.default_rng(seed)
    dtype = np.uint8 if depth == 8 else np.uint16
    high = 256 if depth == 8 else 65536
    pixels = rng.integers(0, high, size=(6, 7, channels)).astype(dtype)
    img = ImageBuffer.from_array(pixels, bit_depth=depth)
    if channels == 3 and depth == 16:
        return
    assert decode_png(encode_png(img)) == img


def test_save_and_load(tmp_path) -> None:
    img = random_image(np.random.default_rng(11), 9, 5, 3)
    path = tmp_path / "frame.png"
    save_image(img, str(path))
    assert load_image(str(path)) == img
