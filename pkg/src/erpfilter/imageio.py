"""Frame, mask and depth-map file formats."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "1", "P"):
            raise ValueError(f"{path}: expected an 8-bit grayscale PGM, got mode {im.mode}")
        return np.array(im.convert("L"), dtype=np.uint8)


def write_pgm(path, frame: np.ndarray) -> None:
    arr = np.asarray(frame)
    if arr.ndim != 2:
        raise ValueError(f"PGM frames are 2-D, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PPM")


def read_raw_y(path, width: int, height: int, frame_index: int = 0) -> np.ndarray:
    """One 8-bit luma plane from a raw planar .y file (frames stored back to back)."""
    size = width * height
    with open(path, "rb") as fh:
        fh.seek(frame_index * size)
        buf = fh.read(size)
    if len(buf) != size:
        raise ValueError(f"{path}: short read for frame {frame_index} at {width}x{height}")
    return np.frombuffer(buf, dtype=np.uint8).reshape(height, width).copy()


def write_raw_y(path, frame: np.ndarray) -> None:
    Path(path).write_bytes(np.ascontiguousarray(frame, dtype=np.uint8).tobytes())


def read_frame(path, width: int | None = None, height: int | None = None) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".y", ".yuv", ".raw"):
        if width is None or height is None:
            raise ValueError(f"{path}: raw frames need --width and --height")
        return read_raw_y(path, width, height)
    return read_pgm(path)


def write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)


def read_mask(path) -> np.ndarray:
    arr = read_pgm(path)
    bad = ~np.isin(arr, (0, 255))
    if bad.any():
        raise ValueError(f"{path}: mask PGM must contain only 0 and 255")
    return (arr == 255).astype(np.uint8)


def write_depth_map(path, depth: np.ndarray) -> None:
    lines = ["".join(str(int(v)) for v in row) for row in np.asarray(depth)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_depth_map(path) -> np.ndarray:
    rows = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: depth map rows must be non-empty and equally long")
    return np.array([[int(ch) for ch in r] for r in rows], dtype=np.uint8)
