"""Binary partition masks from CU depth maps.

Pixels of CUs at depth 0 or 1 (64x64 and 32x32 blocks) get 0, pixels of
CUs at depth 2 or 3 (16x16 and 8x8) get 1. The small-kernel branch of the
filter sees the 1-region, the large-kernel branch its complement.
"""
from __future__ import annotations

import numpy as np

from .codec import CELL, validate_quadtree

SMALL_CU_MIN_DEPTH = 2


def partition_mask(depth: np.ndarray, width: int, height: int) -> np.ndarray:
    depth = np.asarray(depth)
    validate_quadtree(depth)
    if depth.shape[0] * CELL < height or depth.shape[1] * CELL < width:
        raise ValueError(f"depth map {depth.shape} (cells) does not cover a {width}x{height} frame")
    cells = (depth >= SMALL_CU_MIN_DEPTH).astype(np.uint8)
    full = np.repeat(np.repeat(cells, CELL, axis=0), CELL, axis=1)
    return np.ascontiguousarray(full[:height, :width])


def complement(mask: np.ndarray) -> np.ndarray:
    return (1 - np.asarray(mask)).astype(np.uint8)
