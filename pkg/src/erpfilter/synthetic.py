"""Deterministic synthetic ERP luma frames for tests and smoke experiments.

Content is defined on the sphere and then sampled on the ERP grid, so it
shows the usual ERP traits: horizontally stretched, smoother poles and a
busier equator.
"""
from __future__ import annotations

import numpy as np


def sphere_directions(width: int, height: int) -> np.ndarray:
    """Unit vectors (H, W, 3) at ERP pixel centres."""
    lon = ((np.arange(width) + 0.5) / width - 0.5) * 2 * np.pi
    lat = (0.5 - (np.arange(height) + 0.5) / height) * np.pi
    lon, lat = np.meshgrid(lon, lat)
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def _unit(rng, n):
    d = rng.standard_normal((n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def erp_frame(width: int = 512, height: int = 256, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = sphere_directions(width, height)
    lat = np.arcsin(v[..., 2])
    img = np.full((height, width), 110.0 + 40.0 * rng.random())

    # broad shading
    for d in _unit(rng, 3):
        img += rng.uniform(15, 35) * (v @ d)
    # hard-ish region boundaries (planes cutting the sphere)
    for d in _unit(rng, 5):
        t = rng.uniform(-0.6, 0.6)
        img += rng.uniform(-45, 45) * np.tanh((v @ d - t) / rng.uniform(0.004, 0.03))
    # texture concentrated near the equator
    equator = np.cos(lat) ** 3
    for d in _unit(rng, 6):
        freq = rng.uniform(15, 60)
        img += rng.uniform(6, 18) * equator * np.sin(freq * (v @ d) + rng.uniform(0, 2 * np.pi))
    img += rng.normal(0, 2.0, img.shape) * equator
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def erp_frames(count: int, width: int = 512, height: int = 256, seed: int = 0) -> list:
    return [erp_frame(width, height, seed=seed * 1000 + i) for i in range(count)]
