"""Synthetic correlated multispectral scenes for tests and demos."""

from __future__ import annotations

import math

import numpy as np

from .pipeline import ImageSet

# per-band (gain, offset, private-component weight); band 0 is the reference
DEFAULT_BAND_MODEL = ((1.0, 0.0, 0.0), (0.9, 6.0, 0.25), (0.8, 10.0, 0.45), (0.6, 18.0, 0.7))


def _rectangles(rng, h, w, count, amp):
    X = np.zeros((h, w))
    for _ in range(count):
        r0, c0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
        rh, cw = rng.integers(4, max(5, h // 3)), rng.integers(4, max(5, w // 3))
        X[r0:r0 + rh, c0:c0 + cw] += rng.uniform(-amp, amp)
    return X


def piecewise_scene(
    height: int = 128,
    width: int = 128,
    seed: int = 0,
    band_model=DEFAULT_BAND_MODEL,
    noise: float = 0.0,
    mean: float = 50.0,
    chain: float = 0.6,
) -> ImageSet:
    """Piecewise-constant scene with a shared structure and band-private parts.

    Band ``k`` is ``gain * shared + offset + weight * private_k`` plus optional
    white noise; samples stay inside an 8-bit-like range.  Private parts of
    neighbouring bands are correlated with coefficient ``chain``, so earlier
    coded bands carry information about later ones.
    """
    rng = np.random.default_rng(seed)
    density = max(1, (height * width) // 600)
    shared = _rectangles(rng, height, width, density, 40.0)
    bands = []
    private = np.zeros((height, width))
    for gain, offset, weight in band_model:
        fresh = _rectangles(rng, height, width, density, 40.0)
        private = chain * private + math.sqrt(1.0 - chain * chain) * fresh
        b = mean + gain * shared + offset + weight * private
        if noise > 0:
            b = b + rng.normal(0.0, noise, b.shape)
        bands.append(np.clip(b, 0.0, 255.0))
    return ImageSet(tuple(bands), bit_depth=8)
