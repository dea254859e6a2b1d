"""Rate-distortion bookkeeping: per-frame quality reports and BD-rate."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import erp_geom

BD_METHOD = "cubic polynomial fit of ln(rate) over quality, integrated on the common quality interval"

DEFAULT_VIEWPORTS = (erp_geom.ViewportSpec(0.0, 0.0), erp_geom.ViewportSpec(90.0, 0.0))


@dataclass(frozen=True)
class RDPoint:
    bitrate: float
    quality: float

    def __post_init__(self):
        if not self.bitrate > 0:
            raise ValueError(f"bitrate must be positive, got {self.bitrate}")
        if not math.isfinite(self.quality):
            raise ValueError(f"quality must be finite, got {self.quality}")


def _curve(points: Sequence[RDPoint], label: str) -> tuple[np.ndarray, np.ndarray]:
    pts = [p if isinstance(p, RDPoint) else RDPoint(*p) for p in points]
    if len(pts) < 4:
        raise ValueError(f"{label} curve needs at least 4 RD points, got {len(pts)}")
    pts.sort(key=lambda p: p.bitrate)
    rate = np.array([p.bitrate for p in pts], dtype=np.float64)
    q = np.array([p.quality for p in pts], dtype=np.float64)
    if np.any(np.diff(q) <= 0) or np.any(np.diff(rate) <= 0):
        raise ValueError(f"{label} curve: quality must increase strictly with bitrate")
    return np.log(rate), q


def bd_log_rate(anchor: Sequence[RDPoint], test: Sequence[RDPoint]) -> float:
    """Mean ln(rate_test) - ln(rate_anchor) over the common quality interval."""
    la, qa = _curve(anchor, "anchor")
    lt, qt = _curve(test, "test")
    lo = max(qa.min(), qt.min())
    hi = min(qa.max(), qt.max())
    if not hi > lo:
        raise ValueError(f"quality ranges do not overlap: anchor [{qa.min():.4f}, {qa.max():.4f}] dB, "
                         f"test [{qt.min():.4f}, {qt.max():.4f}] dB")
    pa = np.polyint(np.polyfit(qa, la, 3))
    pt = np.polyint(np.polyfit(qt, lt, 3))
    ia = np.polyval(pa, hi) - np.polyval(pa, lo)
    it = np.polyval(pt, hi) - np.polyval(pt, lo)
    return float((it - ia) / (hi - lo))


def bd_rate(anchor: Sequence[RDPoint], test: Sequence[RDPoint]) -> float:
    """Bjontegaard delta rate in percent; negative means the test saves bits."""
    return 100.0 * (math.exp(bd_log_rate(anchor, test)) - 1.0)


def read_rd_csv(path) -> list:
    with open(path, newline="") as fh:
        return [RDPoint(float(r["bitrate"]), float(r["quality"])) for r in csv.DictReader(fh)]


def write_rd_csv(path, points: Sequence[RDPoint], labels: Sequence | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "bitrate", "quality"] if labels is not None else ["bitrate", "quality"])
        for i, p in enumerate(points):
            row = [repr(float(p.bitrate)), repr(float(p.quality))]
            w.writerow([labels[i]] + row if labels is not None else row)


# ---------------------------------------------------------------------------
# quality reports
# ---------------------------------------------------------------------------

def viewport_label(i: int, spec: erp_geom.ViewportSpec) -> str:
    return f"vp{i}_psnr"


@dataclass
class EvalReport:
    columns: list
    rows: list  # per frame: {"frame": name, metric: value}
    average: dict = field(default_factory=dict)
    viewports: list = field(default_factory=list)

    def to_json(self) -> dict:
        fmt = lambda d: {k: (erp_geom.format_db(v, 6) if isinstance(v, float) else v) for k, v in d.items()}
        return {"columns": self.columns, "frames": [fmt(r) for r in self.rows], "average": fmt(self.average),
                "viewports": [{"lon": v.lon, "lat": v.lat, "fov_w": v.fov_w, "fov_h": v.fov_h,
                               "width": v.width, "height": v.height, "kind": "static"}
                              for v in self.viewports]}

    def write(self, csv_path=None, json_path=None) -> None:
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["frame"] + self.columns)
                for r in self.rows + [dict(self.average, frame="average")]:
                    w.writerow([r["frame"]] + [erp_geom.format_db(r[c], 6) for c in self.columns])
        if json_path is not None:
            with open(json_path, "w") as fh:
                json.dump(self.to_json(), fh, indent=2, sort_keys=True)
                fh.write("\n")


def frame_metrics(gt: np.ndarray, recon: np.ndarray,
                  viewports: Sequence[erp_geom.ViewportSpec] = DEFAULT_VIEWPORTS) -> dict:
    out = {"psnr": erp_geom.psnr(gt, recon), "ws_psnr": erp_geom.ws_psnr(gt, recon)}
    for i, v in enumerate(viewports):
        out[viewport_label(i, v)] = erp_geom.viewport_psnr(gt, recon, v)
    return out


def evaluate(gt_frames: Sequence[np.ndarray], recon_frames: Sequence[np.ndarray],
             viewports: Sequence[erp_geom.ViewportSpec] = DEFAULT_VIEWPORTS,
             names: Sequence[str] | None = None) -> EvalReport:
    if len(gt_frames) != len(recon_frames):
        raise ValueError(f"frame count mismatch: {len(gt_frames)} ground-truth vs {len(recon_frames)} reconstructed")
    if not gt_frames:
        raise ValueError("no frames to evaluate")
    names = list(names) if names is not None else [str(i) for i in range(len(gt_frames))]
    columns = ["psnr", "ws_psnr"] + [viewport_label(i, v) for i, v in enumerate(viewports)]
    rows = []
    for name, gt, rec in zip(names, gt_frames, recon_frames):
        rows.append({"frame": name, **frame_metrics(gt, rec, viewports)})
    average = {c: float(np.mean([r[c] for r in rows])) for c in columns}
    return EvalReport(columns, rows, average, list(viewports))
