"""Procedural training corpus.

Desk-scale stand-in for a photo corpus: smooth gradients, band-limited
noise fields, oriented gratings, and soft blobs, mixed per image with a
seeded generator so the corpus is a pure function of (count, size, seed).
Values are [3, size, size] floats in [0, 1].
"""

from __future__ import annotations

import numpy as np


def _bilinear_upscale(grid: np.ndarray, size: int) -> np.ndarray:
    """Upscale a small 2-d grid to size x size with bilinear sampling."""
    gh, gw = grid.shape
    ys = np.linspace(0, gh - 1, size)
    xs = np.linspace(0, gw - 1, size)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bot = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def _gradient(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    a, b = rng.uniform(-1, 1, size=2)
    field = a * yy + b * xx
    if rng.uniform() < 0.5:
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        field = field + rng.uniform(-1.5, 1.5) * np.hypot(yy - cy, xx - cx)
    return field


def _smooth_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    cells = int(rng.integers(3, 10))
    return _bilinear_upscale(rng.standard_normal((cells, cells)), size)


def _grating(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(0.05, 0.45)
    phase = rng.uniform(0, 2 * np.pi)
    wave = np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    if rng.uniform() < 0.4:
        theta2 = theta + np.pi / 2
        wave = 0.5 * wave + 0.5 * np.sin(
            rng.uniform(0.05, 0.45) * (np.cos(theta2) * xx + np.sin(theta2) * yy))
    return wave


def _blobs(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    field = np.zeros((size, size))
    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, size, size=2)
        radius = rng.uniform(size / 12, size / 3)
        field += rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2)
                                             / (2 * radius ** 2))
    return field


_GENERATORS = (_gradient, _smooth_noise, _grating, _blobs)


def make_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """One [3, size, size] image: a random mix of structure families with a
    mild per-channel tint, normalized into [0, 1]."""
    weights = rng.dirichlet(np.ones(len(_GENERATORS)))
    luma = sum(w * gen(rng, size) for w, gen in zip(weights, _GENERATORS))
    lo, hi = luma.min(), luma.max()
    luma = (luma - lo) / (hi - lo + 1e-9)
    tint = rng.uniform(0.7, 1.0, size=3)
    offset = rng.uniform(0.0, 0.2, size=3)
    img = luma[None, :, :] * tint[:, None, None] + offset[:, None, None]
    img += rng.normal(0.0, rng.uniform(0.0, 0.02), size=img.shape)
    return np.clip(img, 0.0, 1.0)


def make_corpus(count: int, size: int, seed: int) -> np.ndarray:
    """Deterministic corpus of [count, 3, size, size] patches."""
    rng = np.random.default_rng(seed)
    return np.stack([make_image(rng, size) for _ in range(count)])


def make_eval_images(count: int, size: int, seed: int) -> np.ndarray:
    """Held-out image set, disjoint from any training corpus seed."""
    rng = np.random.default_rng(seed ^ 0x5EED_E7A1)
    return np.stack([make_image(rng, size) for _ in range(count)])
