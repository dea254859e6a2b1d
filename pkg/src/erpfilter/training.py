"""Patch corpus, distortion-aware loss, and the Adam training loop."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import erp_geom, filternet
from .codec import encode_intra
from .maskgen import partition_mask
from .numerics import OptimizerConfig, ParameterSet, Tensor, adam_step, halving_schedule, no_grad
from .numerics import ops

log = logging.getLogger(__name__)

DEFAULT_QPS = (27, 32, 37, 42)


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lam: float = 0.5
    patch: int = 64
    middle_count: int = 50
    pole_count: int = 30
    qps: tuple = DEFAULT_QPS
    viewport_fov: float = 5.0
    viewport_loss: str = "abs"  # "abs" as the loss is written, "squared" for ablation
    optimizer: OptimizerConfig = field(
        default_factory=lambda: OptimizerConfig(1e-4, decay_schedule=halving_schedule(1e-4)))
    batch_size: int = 16
    iterations: int = 1000
    seed: int = 0
    split_threshold: float = 4.0
    validate_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        self.qps = tuple(int(q) for q in self.qps)
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not (self.patch % 8 == 0 or 64 % self.patch == 0):
            raise ValueError(f"patch size {self.patch} must be a multiple of 8 or divide 64")
        if self.viewport_loss not in ("abs", "squared"):
            raise ValueError(f"viewport_loss must be 'abs' or 'squared', got {self.viewport_loss!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["qps"] = list(self.qps)
        return d


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------

@dataclass
class PatchRecord:
    Y: np.ndarray  # ground truth, uint8 (P, P)
    I: np.ndarray  # distorted (deblocked reconstruction), uint8
    mask: np.ndarray  # uint8 {0, 1}
    G: np.ndarray  # slice of the frame-normalised weight map, float64
    origin: tuple  # (row, col) in the frame
    qp: int
    image: int
    band: str  # "middle" or "pole"
    frame_size: tuple  # (W, H)

    @property
    def key(self) -> str:
        return f"img{self.image}-qp{self.qp}-{self.band}-r{self.origin[0]}-c{self.origin[1]}"


@dataclass
class Corpus:
    records: list
    warnings: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]


def band_rows(height: int, patch: int) -> dict:
    """Admissible patch-origin rows: middle = [H/4, 3H/4), poles = the rest."""
    lo, hi = height // 4, (3 * height) // 4
    middle = list(range(lo, hi - patch + 1))
    pole = list(range(0, lo - patch + 1)) + list(range(hi, height - patch + 1))
    return {"middle": middle, "pole": pole}


def sample_patches(rng: np.random.Generator, rows: list, width: int, patch: int, count: int,
                   attempts_per_patch: int = 50) -> list:
    """Up to ``count`` pairwise non-overlapping patch origins by rejection sampling."""
    chosen: list = []
    if not rows or width < patch or count <= 0:
        return chosen
    for _ in range(count * attempts_per_patch):
        if len(chosen) == count:
            break
        r = int(rows[rng.integers(len(rows))])
        c = int(rng.integers(width - patch + 1))
        if all(abs(r - r2) >= patch or abs(c - c2) >= patch for r2, c2 in chosen):
            chosen.append((r, c))
    return chosen


Codec = Callable[[np.ndarray, int], "object"]


def build_corpus(images: Sequence[np.ndarray], config: TrainConfig, codec: Codec | None = None) -> Corpus:
    if codec is None:
        def codec(img, qp):
            return encode_intra(img, qp, split_threshold=config.split_threshold)
    rng = np.random.default_rng(config.seed)
    p = config.patch
    records, warnings = [], []
    for idx, img in enumerate(images):
        img = np.asarray(img, dtype=np.uint8)
        h, w = img.shape
        G = erp_geom.weight_map(w, h)
        bands = band_rows(h, p)
        for qp in config.qps:
            result = codec(img, qp)
            mask = partition_mask(result.depth, w, h)
            for band, count in (("middle", config.middle_count), ("pole", config.pole_count)):
                origins = sample_patches(rng, bands[band], w, p, count)
                if len(origins) < count:
                    msg = f"image {idx} qp {qp}: only {len(origins)} of {count} {band} patches fit"
                    warnings.append(msg)
                    log.warning(msg)
                for r, c in origins:
                    sl = (slice(r, r + p), slice(c, c + p))
                    records.append(PatchRecord(Y=img[sl].copy(), I=result.recon[sl].copy(),
                                               mask=mask[sl].copy(), G=G[sl].copy(), origin=(r, c),
                                               qp=qp, image=idx, band=band, frame_size=(w, h)))
    order = rng.permutation(len(records))
    return Corpus([records[i] for i in order], warnings)


def write_corpus(corpus: Corpus, directory) -> Path:
    """JSON-lines manifest plus one .npz raster sidecar per record."""
    directory = Path(directory)
    (directory / "rasters").mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for i, rec in enumerate(corpus.records):
            side = f"rasters/{i:06d}.npz"
            np.savez(directory / side, Y=rec.Y, I=rec.I, mask=rec.mask, G=rec.G)
            fh.write(json.dumps({"index": i, "key": rec.key, "origin": list(rec.origin), "qp": rec.qp,
                                 "image": rec.image, "band": rec.band, "frame_size": list(rec.frame_size),
                                 "rasters": side}) + "\n")
    if corpus.warnings:
        (directory / "warnings.txt").write_text("\n".join(corpus.warnings) + "\n")
    return manifest


def read_corpus(manifest) -> Corpus:
    manifest = Path(manifest)
    records = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        meta = json.loads(line)
        with np.load(manifest.parent / meta["rasters"]) as z:
            records.append(PatchRecord(Y=z["Y"], I=z["I"], mask=z["mask"], G=z["G"],
                                       origin=tuple(meta["origin"]), qp=meta["qp"], image=meta["image"],
                                       band=meta["band"], frame_size=tuple(meta["frame_size"])))
    warn = manifest.parent / "warnings.txt"
    warnings = warn.read_text().splitlines() if warn.exists() else []
    return Corpus(records, warnings)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

@dataclass
class ViewportSampler:
    """Fixed bilinear taps of one viewport per batch item, into flattened patches."""

    index: np.ndarray  # (B, Q, 4) int
    weights: np.ndarray  # (B, Q, 4)

    def sample(self, patches: np.ndarray) -> np.ndarray:
        flat = patches.reshape(patches.shape[0], -1)
        picked = np.take_along_axis(flat, self.index.reshape(len(flat), -1), axis=1)
        return (picked.reshape(self.index.shape) * self.weights).sum(axis=2)


def patch_viewport_taps(origin: tuple, patch: int, frame_size: tuple, fov: float,
                        size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear taps of a viewport centred on the patch centre, in patch coordinates."""
    w, h = frame_size
    r, c = origin
    size = size or patch
    lon, lat = erp_geom.erp_to_sphere(c + patch / 2 + 0.5, r + patch / 2 + 0.5, w, h)
    spec = erp_geom.ViewportSpec(float(lon), float(lat), fov, fov, size, size)
    grid = erp_geom.viewport_grid(spec, w, h)
    p_local = grid.p - c
    # the viewport may straddle the longitude seam relative to the patch
    p_local = np.where(p_local > w / 2, p_local - w, p_local)
    p_local = np.where(p_local < -w / 2, p_local + w, p_local)
    q_local = grid.q - r
    index, weights = erp_geom.bilinear_weights(p_local, q_local, patch, patch, wrap_x=False)
    return index.reshape(-1, 4), weights.reshape(-1, 4)


def viewport_sampler(records: Sequence[PatchRecord], fov: float) -> ViewportSampler:
    taps = [patch_viewport_taps(rec.origin, rec.Y.shape[0], rec.frame_size, fov) for rec in records]
    return ViewportSampler(np.stack([t[0] for t in taps]), np.stack([t[1] for t in taps]))


@dataclass
class LossTerms:
    total: Tensor
    wmse: Tensor
    viewport: Tensor


def distortion_aware_loss(Y, restored: Tensor, G, viewport: ViewportSampler | None = None,
                          lam: float = 0.5, mode: str = "abs") -> LossTerms:
    """Weighted MSE over patches plus lam times a viewport difference term.

    ``Y`` and ``G`` are arrays shaped like ``restored`` (B,1,P,P); ``G`` keeps
    the frame-level normalisation. The viewport term compares bilinear
    viewport samples of ``restored`` and ``Y``.
    """
    restored = restored if isinstance(restored, Tensor) else Tensor(np.asarray(restored))
    dtype = restored.dtype
    Y = np.asarray(Y, dtype=dtype)
    G = np.asarray(G, dtype=dtype)
    if Y.shape != restored.shape or G.shape != restored.shape:
        raise ValueError(f"loss shapes differ: Y {Y.shape}, restored {restored.shape}, G {G.shape}")
    l_re = ops.mean(ops.mul(ops.square(ops.sub(Y, restored)), G))
    if viewport is None or lam == 0:
        l_v = Tensor(np.zeros((), dtype=dtype))
    else:
        b = restored.shape[0]
        v_hat = ops.gather_weighted(ops.reshape(restored, (b, -1)), viewport.index, viewport.weights)
        v_gt = viewport.sample(Y).astype(dtype)
        diff = ops.sub(v_hat, v_gt)
        l_v = ops.mean(ops.abs(diff) if mode == "abs" else ops.square(diff))
    total = ops.add(l_re, ops.mul(l_v, dtype.type(lam))) if lam else l_re
    return LossTerms(total, l_re, l_v)


# ---------------------------------------------------------------------------
# optimisation loop
# ---------------------------------------------------------------------------

@dataclass
class ValidationFrame:
    gt: np.ndarray
    distorted: np.ndarray
    mask: np.ndarray


def validation_set(images: Sequence[np.ndarray], qp: int, split_threshold: float = 4.0) -> list:
    out = []
    for img in images:
        res = encode_intra(img, qp, split_threshold=split_threshold)
        h, w = img.shape
        out.append(ValidationFrame(img, res.recon, partition_mask(res.depth, w, h)))
    return out


def validate(frames: Sequence[ValidationFrame], params: ParameterSet, cfg: filternet.ModelConfig) -> dict:
    """Mean WS-PSNR of restored and of unfiltered frames against ground truth."""
    restored, baseline = [], []
    for f in frames:
        out = filternet.restore(f.distorted, f.mask, params, cfg)
        restored.append(erp_geom.ws_psnr(f.gt, out))
        baseline.append(erp_geom.ws_psnr(f.gt, f.distorted))
    return {"ws_psnr_filtered": float(np.mean(restored)), "ws_psnr_unfiltered": float(np.mean(baseline)),
            "gain_db": float(np.mean(restored) - np.mean(baseline))}


@dataclass
class TrainResult:
    params: ParameterSet
    history: list  # dicts with step, L, L_re, L_v, lr
    validation: list  # dicts with step and validate() fields


def _batch(records: Sequence[PatchRecord], dtype):
    scale = dtype.type(255)
    I = np.stack([r.I for r in records])[:, None].astype(dtype) / scale
    Y = np.stack([r.Y for r in records])[:, None].astype(dtype) / scale
    M = np.stack([r.mask for r in records])[:, None].astype(dtype)
    G = np.stack([r.G for r in records])[:, None].astype(dtype)
    return I, Y, M, G


def train(corpus: Corpus | Sequence[PatchRecord], params: ParameterSet, model_cfg: filternet.ModelConfig,
          cfg: TrainConfig, validation: Sequence[ValidationFrame] | None = None,
          checkpoint_dir=None, on_step: Callable[[dict], None] | None = None) -> TrainResult:
    records = list(corpus.records if isinstance(corpus, Corpus) else corpus)
    if not records:
        raise ValueError("cannot train on an empty corpus")
    filternet.check_weights(params, model_cfg)
    dtype = params["stem.0.weight"].dtype
    rng = np.random.default_rng(cfg.seed)
    taps = {id(r): patch_viewport_taps(r.origin, r.Y.shape[0], r.frame_size, cfg.viewport_fov)
            for r in records} if cfg.lam > 0 else {}
    order = rng.permutation(len(records))
    cursor = 0
    history, val_log = [], []
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    for step in range(1, cfg.iterations + 1):
        if cursor + cfg.batch_size > len(order):
            order = rng.permutation(len(records))
            cursor = 0
        batch = [records[i] for i in order[cursor:cursor + cfg.batch_size]]
        cursor += cfg.batch_size

        I, Y, M, G = _batch(batch, dtype)
        sampler = None
        if cfg.lam > 0:
            sampler = ViewportSampler(np.stack([taps[id(r)][0] for r in batch]),
                                      np.stack([taps[id(r)][1] for r in batch]))
        params.zero_grad()
        out = filternet.forward(I, M, params, model_cfg)
        terms = distortion_aware_loss(Y, out, G, sampler, cfg.lam, cfg.viewport_loss)
        value = float(terms.total.data)
        if not np.isfinite(value):
            raise TrainingDivergedError(
                f"non-finite loss at step {step}; records {[r.key for r in batch]}")
        terms.total.backward()
        lr = adam_step(params, cfg.optimizer, step)
        entry = {"step": step, "L": value, "L_re": float(terms.wmse.data),
                 "L_v": float(terms.viewport.data), "lr": lr}
        history.append(entry)
        if on_step is not None:
            on_step(entry)

        if validation and cfg.validate_every and step % cfg.validate_every == 0:
            val_log.append({"step": step, **validate(validation, params, model_cfg)})
        if checkpoint_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            filternet.save_model(Path(checkpoint_dir) / f"step{step:07d}.erpf", params, model_cfg)

    if validation and (not val_log or val_log[-1]["step"] != cfg.iterations):
        val_log.append({"step": cfg.iterations, **validate(validation, params, model_cfg)})
    return TrainResult(params, history, val_log)


def write_history_csv(history: Sequence[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write("step,L,L_re,L_v,lr\n")
        for e in history:
            fh.write(f"{e['step']},{e['L']!r},{e['L_re']!r},{e['L_v']!r},{e['lr']!r}\n")


def smoothed(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; entry i averages values[max(0, i-window+1) : i+1]."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    i = np.arange(1, len(v) + 1)
    lo = np.maximum(0, i - window)
    return (c[i] - c[lo]) / (i - lo)
