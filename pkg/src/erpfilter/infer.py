"""Whole-frame filtering by overlapping tiles merged on tile cores."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import filternet
from .numerics import ParameterSet, exactsum, no_grad

DEFAULT_TILE = 1024
DEFAULT_OVERLAP = 20


def axis_origins(length: int, tile: int, overlap: int) -> list:
    if length <= tile:
        return [0]
    step = tile - overlap
    out = []
    k = 0
    while True:
        o = min(k * step, length - tile)
        if not out or o != out[-1]:
            out.append(o)
        if o == length - tile:
            return out
        k += 1


@dataclass(frozen=True)
class TilePlan:
    width: int
    height: int
    tile: int = DEFAULT_TILE
    overlap: int = DEFAULT_OVERLAP
    xs: tuple = ()
    ys: tuple = ()

    @property
    def origins(self) -> list:
        """(x, y) of every tile, row-major."""
        return [(x, y) for y in self.ys for x in self.xs]

    def tile_width(self) -> int:
        return min(self.tile, self.width)

    def tile_height(self) -> int:
        return min(self.tile, self.height)

    def core_bounds(self) -> tuple[list, list]:
        """Per-axis [start, stop) of the pixels each tile owns."""
        return (_cores(self.xs, self.tile_width(), self.width),
                _cores(self.ys, self.tile_height(), self.height))


def _cores(origins, size: int, length: int) -> list:
    """Nearest-centre ownership along one axis; ties go to the lower origin."""
    centres = [o + size / 2 for o in origins]
    pos = np.arange(length) + 0.5
    dist = np.abs(pos[:, None] - np.asarray(centres)[None, :])
    owner = np.argmin(dist, axis=1)  # argmin returns the first, i.e. lower origin, on ties
    bounds = []
    for i in range(len(origins)):
        idx = np.nonzero(owner == i)[0]
        bounds.append((int(idx[0]), int(idx[-1]) + 1) if idx.size else (0, 0))
    return bounds


def plan_tiles(width: int, height: int, tile: int = DEFAULT_TILE, overlap: int = DEFAULT_OVERLAP) -> TilePlan:
    if width < 1 or height < 1:
        raise ValueError(f"frame size must be positive, got {width}x{height}")
    if overlap < 0:
        raise ValueError("overlap must be non-negative")
    if tile <= 2 * overlap:
        raise ValueError(f"tile size {tile} must exceed twice the overlap ({overlap})")
    return TilePlan(width, height, tile, overlap,
                    tuple(axis_origins(width, tile, overlap)), tuple(axis_origins(height, tile, overlap)))


POOLING = ("frame", "tile")


def _forward(frame01: np.ndarray, mask: np.ndarray, params: ParameterSet, cfg, pooled=None) -> np.ndarray:
    with no_grad():
        return filternet.forward(frame01[None, None], mask[None, None], params, cfg, pooled=pooled).data[0, 0]


def _tiles(plan: TilePlan):
    """(x, y, core x-range, core y-range) of every tile that owns pixels."""
    xcores, ycores = plan.core_bounds()
    for (y, yc) in zip(plan.ys, ycores):
        for (x, xc) in zip(plan.xs, xcores):
            if yc[1] > yc[0] and xc[1] > xc[0]:
                yield x, y, xc, yc


def frame_descriptors(frame, mask, params: ParameterSet, cfg, plan: TilePlan) -> dict:
    """Whole-frame attention descriptors, assembled tile by tile.

    One pass per RCAB: the separated features of each tile core are summed
    exactly, so the mean equals the one a whole-frame forward computes.
    """
    pooled = {}
    tw, th = plan.tile_width(), plan.tile_height()
    count = plan.width * plan.height
    for i in range(cfg.rcab_count):
        sums = None
        for x, y, (x0, x1), (y0, y1) in _tiles(plan):
            with no_grad():
                s = filternet.separated_features(frame[None, None, y:y + th, x:x + tw],
                                                 mask[None, None, y:y + th, x:x + tw], params, cfg, i, pooled)
            core = s.data[0, :, y0 - y:y1 - y, x0 - x:x1 - x]
            part = exactsum.row_sums(core.reshape(core.shape[0], -1))
            sums = part if sums is None else [a + b for a, b in zip(sums, part)]
        pooled[i] = exactsum.rounded_means(sums, count, frame.dtype)[None]
    return pooled


def filter_frame(frame, mask, params: ParameterSet, cfg, plan: TilePlan | None = None,
                 pooling: str = "frame") -> np.ndarray:
    """Restore a normalised float frame (H, W) in [0, 1]; returns float output.

    Tiles are filtered separately and every output pixel is copied from the
    tile whose centre is nearest to it.  The channel attention pools over the
    whole frame by default (``pooling="frame"``); ``"tile"`` lets each tile
    pool over itself only.
    """
    if pooling not in POOLING:
        raise ValueError(f"pooling must be one of {POOLING}, got {pooling!r}")
    dtype = params["stem.0.weight"].dtype
    frame = np.asarray(frame, dtype=dtype)
    mask = np.asarray(mask)
    if frame.ndim != 2 or mask.shape != frame.shape:
        raise ValueError(f"frame {frame.shape} and mask {mask.shape} must be matching 2-D arrays")
    h, w = frame.shape
    if plan is None:
        plan = plan_tiles(w, h)
    if (plan.width, plan.height) != (w, h):
        raise ValueError(f"plan is for {plan.width}x{plan.height}, frame is {w}x{h}")
    tw, th = plan.tile_width(), plan.tile_height()
    pooled = None
    if cfg.use_ar and pooling == "frame" and len(plan.origins) > 1:
        pooled = frame_descriptors(frame, mask, params, cfg, plan)
    out = np.empty_like(frame)
    for x, y, (x0, x1), (y0, y1) in _tiles(plan):
        res = _forward(frame[y:y + th, x:x + tw], mask[y:y + th, x:x + tw], params, cfg, pooled)
        out[y0:y1, x0:x1] = res[y0 - y:y1 - y, x0 - x:x1 - x]
    return out


def filter_uint8(frame: np.ndarray, mask: np.ndarray, params: ParameterSet, cfg,
                 plan: TilePlan | None = None, pooling: str = "frame") -> np.ndarray:
    dtype = params["stem.0.weight"].dtype
    out = filter_frame(np.asarray(frame, dtype=dtype) / dtype.type(255), mask, params, cfg, plan, pooling)
    return np.clip(np.rint(out * 255), 0, 255).astype(np.uint8)


def seam_report(frame, mask, params: ParameterSet, cfg, plan: TilePlan, pooling: str = "frame") -> dict:
    """Compare tiled against whole-frame inference, with per-seam maxima."""
    dtype = params["stem.0.weight"].dtype
    frame = np.asarray(frame, dtype=dtype)
    whole = _forward(frame, np.asarray(mask), params, cfg)
    tiled = filter_frame(frame, mask, params, cfg, plan, pooling)
    diff = np.abs(whole.astype(np.float64) - tiled.astype(np.float64))
    xcores, ycores = plan.core_bounds()
    cols = sorted({b[0] for b in xcores if b[0] > 0})
    rows = sorted({b[0] for b in ycores if b[0] > 0})
    seams = []
    for c in cols:
        seams.append({"axis": "column", "index": c,
                      "max_abs_diff": float(diff[:, max(c - 1, 0):c + 1].max())})
    for r in rows:
        seams.append({"axis": "row", "index": r,
                      "max_abs_diff": float(diff[max(r - 1, 0):r + 1, :].max())})
    radius = filternet.receptive_radius(cfg)
    return {"width": plan.width, "height": plan.height, "tile": plan.tile, "overlap": plan.overlap,
            "receptive_radius": radius, "pooling": pooling,
            "exact_expected": plan.overlap >= 2 * radius and (pooling == "frame" or not cfg.use_ar),
            "tiles": len(plan.origins), "max_abs_diff": float(diff.max()),
            "mean_abs_diff": float(diff.mean()), "identical": bool(np.array_equal(whole, tiled)),
            "seams": seams}


def delta_t(t_base: float, t_ours: float) -> float:
    """Relative runtime overhead (t_ours - t_base) / t_base."""
    if not t_base > 0:
        raise ValueError(f"baseline time must be positive, got {t_base}")
    return (t_ours - t_base) / t_base


def timed_filter(frame: np.ndarray, mask: np.ndarray, params: ParameterSet, cfg,
                 plan: TilePlan) -> tuple[np.ndarray, dict]:
    t0 = time.perf_counter()
    out = filter_uint8(frame, mask, params, cfg, plan)
    elapsed = time.perf_counter() - t0
    return out, {"seconds": elapsed, "tiles": len(plan.origins), "width": plan.width,
                 "height": plan.height, "tile": plan.tile, "overlap": plan.overlap}
