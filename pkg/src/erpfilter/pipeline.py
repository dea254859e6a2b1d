"""Experiment runner: encode, deblock, mask, filter, evaluate, BD-rate."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import erp_geom, evaluation, filternet, imageio, infer, synthetic
from .codec import encode_intra
from .maskgen import partition_mask
from .training import DEFAULT_QPS, TrainConfig


class PipelineError(RuntimeError):
    def __init__(self, stage: str, detail: str, artifacts: Path):
        super().__init__(f"stage '{stage}' failed: {detail} (artifacts kept in {artifacts})")
        self.stage = stage
        self.artifacts = artifacts


@dataclass
class RunConfig:
    seed: int = 0
    inputs: list = field(default_factory=list)  # frame paths; empty means synthetic frames
    synthetic: dict = field(default_factory=lambda: {"count": 8, "width": 512, "height": 256, "seed": 100})
    frame_size: list = field(default_factory=list)  # [W, H] for raw .y inputs
    qps: list = field(default_factory=lambda: list(DEFAULT_QPS))
    split_threshold: float = 4.0
    model_path: str | None = None  # None filters with an identity (zero-weight) model
    model: dict = field(default_factory=lambda: filternet.ModelConfig.desk().to_dict())
    train: dict = field(default_factory=dict)
    tile: int = infer.DEFAULT_TILE
    overlap: int = infer.DEFAULT_OVERLAP
    viewports: list = field(default_factory=lambda: [asdict(v) for v in evaluation.DEFAULT_VIEWPORTS])
    out_dir: str = "run"

    def __post_init__(self):
        if not self.qps:
            raise ValueError("qp list must not be empty")
        self.qps = [int(q) for q in self.qps]

    def validate_paths(self) -> None:
        for p in self.inputs:
            if not Path(p).exists():
                raise FileNotFoundError(f"input frame {p} does not exist")
        if self.model_path is not None and not Path(self.model_path).exists():
            raise FileNotFoundError(f"model {self.model_path} does not exist")

    def viewport_specs(self) -> list:
        return [erp_geom.ViewportSpec(**v) for v in self.viewports]

    def model_config(self) -> filternet.ModelConfig:
        return filternet.ModelConfig.from_dict(self.model)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{"seed": self.seed, **self.train})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def load_frames(cfg: RunConfig) -> tuple[list, list]:
    """(names, uint8 frames)."""
    if cfg.inputs:
        size = cfg.frame_size or [None, None]
        frames = [imageio.read_frame(p, *size) for p in cfg.inputs]
        return [Path(p).stem for p in cfg.inputs], frames
    s = cfg.synthetic
    frames = synthetic.erp_frames(s["count"], s["width"], s["height"], seed=s["seed"])
    return [f"syn{i:02d}" for i in range(len(frames))], frames


def _write_summary(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run(cfg: RunConfig) -> Path:
    """Run every stage; returns the experiment directory."""
    cfg.validate_paths()
    out = Path(cfg.out_dir)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    _write_summary(out / "config.json", cfg.to_dict())

    if cfg.model_path is not None:
        params, mcfg = filternet.load_model(cfg.model_path)
    else:
        mcfg = cfg.model_config()
        params = filternet.zero_weights(mcfg)
    viewports = cfg.viewport_specs()
    names, gts = load_frames(cfg)

    rows = []
    anchor_by_qp, test_by_qp, bits_by_qp = {}, {}, {}
    for qp in cfg.qps:
        anchors, tests, bits = [], [], []
        for name, gt in zip(names, gts):
            stem = frames_dir / f"{name}_qp{qp}"
            stage = "encode"
            try:
                res = encode_intra(gt, qp, split_threshold=cfg.split_threshold)
                imageio.write_pgm(f"{stem}_deblocked.pgm", res.recon)
                imageio.write_depth_map(f"{stem}_depth.txt", res.depth)
                stage = "mask"
                h, w = gt.shape
                mask = partition_mask(res.depth, w, h)
                imageio.write_mask(f"{stem}_mask.pgm", mask)
                stage = "filter"
                plan = infer.plan_tiles(w, h, cfg.tile, cfg.overlap)
                filtered = infer.filter_uint8(res.recon, mask, params, mcfg, plan)
                imageio.write_pgm(f"{stem}_filtered.pgm", filtered)
            except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
                raise PipelineError(stage, f"{name} qp {qp}: {exc}", out) from exc
            anchors.append(res.recon)
            tests.append(filtered)
            bits.append(res.estimated_bits)
            for variant, rec in (("anchor", res.recon), ("test", filtered)):
                rows.append({"frame": name, "qp": qp, "variant": variant, "bits": res.estimated_bits,
                             **evaluation.frame_metrics(gt, rec, viewports)})
        anchor_by_qp[qp] = evaluation.evaluate(gts, anchors, viewports, names)
        test_by_qp[qp] = evaluation.evaluate(gts, tests, viewports, names)
        bits_by_qp[qp] = float(np.mean(bits))

    columns = anchor_by_qp[cfg.qps[0]].columns
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "qp", "variant", "bits"] + columns)
        for r in rows:
            w.writerow([r["frame"], r["qp"], r["variant"], r["bits"]]
                       + [erp_geom.format_db(r[c], 6) for c in columns])

    summary = {"bd_method": evaluation.BD_METHOD, "viewports": "static configured centres",
               "qps": cfg.qps, "frames": names, "rd": {}, "bd_rate_percent": {}}
    with open(out / "rd_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "variant", "qp", "bitrate", "quality"])
        for c in columns:
            curves = {}
            for variant, reports in (("anchor", anchor_by_qp), ("test", test_by_qp)):
                pts = [evaluation.RDPoint(bits_by_qp[q], reports[q].average[c]) for q in cfg.qps]
                curves[variant] = pts
                for q, p in zip(cfg.qps, pts):
                    w.writerow([c, variant, q, repr(p.bitrate), repr(p.quality)])
            summary["rd"][c] = {v: [[p.bitrate, p.quality] for p in pts] for v, pts in curves.items()}
            try:
                summary["bd_rate_percent"][c] = round(evaluation.bd_rate(curves["anchor"], curves["test"]), 6)
            except ValueError as exc:
                summary["bd_rate_percent"][c] = f"unavailable: {exc}"
    _write_summary(out / "summary.json", summary)
    return out
