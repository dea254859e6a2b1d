"""Command-line entry point: ``erpfilter <subcommand> ...``.

Every subcommand accepts ``--config file.json``; keys in the file set
defaults for the matching options and explicit flags override them.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import erp_geom, evaluation, filternet, imageio, infer, pipeline, synthetic, training
from .codec import encode_intra
from .maskgen import partition_mask
from .numerics import OptimizerConfig, halving_schedule

log = logging.getLogger("erpfilter")


def _emit(payload: dict, path=None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    print(text)


def _frame_size(args) -> tuple:
    return (args.width, args.height) if getattr(args, "width", None) else (None, None)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_encode(args) -> int:
    frame = imageio.read_frame(args.input, *_frame_size(args))
    res = encode_intra(frame, args.qp, split_threshold=args.split_threshold, deblocking=not args.no_deblock)
    imageio.write_pgm(args.out, res.recon)
    if args.depth:
        imageio.write_depth_map(args.depth, res.depth)
    if args.mask:
        h, w = frame.shape
        imageio.write_mask(args.mask, partition_mask(res.depth, w, h))
    if args.pre_deblock:
        imageio.write_pgm(args.pre_deblock, res.pre_deblock)
    _emit({"qp": res.qp, "estimated_bits": res.estimated_bits, "width": frame.shape[1],
           "height": frame.shape[0], "psnr": erp_geom.format_db(erp_geom.psnr(frame, res.recon)),
           "ws_psnr": erp_geom.format_db(erp_geom.ws_psnr(frame, res.recon))})
    return 0


def cmd_mask(args) -> int:
    depth = imageio.read_depth_map(args.depth)
    mask = partition_mask(depth, args.width, args.height)
    imageio.write_mask(args.out, mask)
    _emit({"width": args.width, "height": args.height, "small_cu_fraction": float(mask.mean())})
    return 0


def cmd_filter(args) -> int:
    frame = imageio.read_frame(args.input, *_frame_size(args))
    mask = imageio.read_mask(args.mask)
    params, cfg = filternet.load_model(args.model)
    h, w = frame.shape
    plan = infer.plan_tiles(w, h, args.tile, args.overlap)
    out, timing = infer.timed_filter(frame, mask, params, cfg, plan)
    imageio.write_pgm(args.out, out)
    if args.seam_report:
        rep = infer.seam_report(frame.astype(np.float64) / 255.0, mask, params, cfg, plan)
        Path(args.seam_report).write_text(json.dumps(rep, indent=2) + "\n")
    _emit({"stage": "filter", **timing}, args.timing)
    return 0


def _train_config(args) -> training.TrainConfig:
    lr = args.lr
    opt = OptimizerConfig(lr, decay_schedule=halving_schedule(lr, args.decay_every))
    return training.TrainConfig(lam=args.lam, patch=args.patch, middle_count=args.middle_count,
                                pole_count=args.pole_count, qps=tuple(args.qps), viewport_fov=args.viewport_fov,
                                viewport_loss=args.viewport_loss, optimizer=opt, batch_size=args.batch_size,
                                iterations=args.iterations, seed=args.seed,
                                validate_every=args.validate_every, checkpoint_every=args.checkpoint_every)


def _load_images(paths, args, synthetic_count: int, seed: int) -> list:
    if paths:
        return [imageio.read_frame(p, *_frame_size(args)) for p in paths]
    return synthetic.erp_frames(synthetic_count, args.synth_width, args.synth_height, seed=seed)


def cmd_corpus(args) -> int:
    cfg = _train_config(args)
    images = _load_images(args.inputs, args, args.synthetic, args.seed)
    corpus = training.build_corpus(images, cfg)
    manifest = training.write_corpus(corpus, args.out)
    _emit({"records": len(corpus), "manifest": str(manifest), "warnings": corpus.warnings})
    return 0


def _model_config(args) -> filternet.ModelConfig:
    overrides = json.loads(args.model_json) if args.model_json else {}
    if args.arch == "desk":
        return filternet.ModelConfig.desk(**overrides)
    return filternet.ModelConfig(**overrides)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    if args.corpus:
        corpus = training.read_corpus(args.corpus)
    else:
        images = _load_images(args.inputs, args, args.synthetic, args.seed)
        corpus = training.build_corpus(images, cfg)
    if args.init:
        params, mcfg = filternet.load_model(args.init)
    else:
        mcfg = _model_config(args)
        params = filternet.init_weights(mcfg, seed=args.seed)
    val = None
    if args.val_synthetic:
        frames = synthetic.erp_frames(args.val_synthetic, args.synth_width, args.synth_height, seed=args.seed + 7)
        val = training.validation_set(frames, args.val_qp)

    def progress(entry):
        if entry["step"] % max(1, args.iterations // 20) == 0:
            log.info("step %d  L %.6g  L_re %.6g  L_v %.6g", entry["step"], entry["L"], entry["L_re"], entry["L_v"])

    res = training.train(corpus, params, mcfg, cfg, validation=val, checkpoint_dir=args.checkpoint_dir,
                         on_step=progress)
    filternet.save_model(args.out, res.params, mcfg)
    if args.log:
        training.write_history_csv(res.history, args.log)
    _emit({"model": args.out, "steps": cfg.iterations, "records": len(corpus),
           "final_loss": res.history[-1]["L"], "validation": res.validation})
    return 0


def _viewport_spec(args) -> erp_geom.ViewportSpec:
    return erp_geom.ViewportSpec(args.lon, args.lat, args.fov_w, args.fov_h, args.vp_width, args.vp_height)


def cmd_viewport(args) -> int:
    frame = imageio.read_frame(args.input, *_frame_size(args))
    spec = _viewport_spec(args)
    h, w = frame.shape
    grid = erp_geom.viewport_grid(spec, w, h)
    vp = erp_geom.bilinear_sample(frame, grid)
    imageio.write_pgm(args.out, vp)
    if args.grid_csv:
        grid.to_csv(args.grid_csv)
    _emit({"lon": spec.lon, "lat": spec.lat, "fov_w": spec.fov_w, "fov_h": spec.fov_h,
           "width": spec.width, "height": spec.height})
    return 0


def cmd_metrics(args) -> int:
    if len(args.ref) != len(args.test):
        raise ValueError(f"frame count mismatch: {len(args.ref)} reference vs {len(args.test)} test frames")
    size = _frame_size(args)
    refs = [imageio.read_frame(p, *size) for p in args.ref]
    tests = [imageio.read_frame(p, *size) for p in args.test]
    viewports = evaluation.DEFAULT_VIEWPORTS
    if args.viewports:
        viewports = [erp_geom.ViewportSpec(**v) for v in json.loads(Path(args.viewports).read_text())]
    report = evaluation.evaluate(refs, tests, viewports, [Path(p).name for p in args.test])
    report.write(args.csv, args.json)
    print(json.dumps(report.to_json()["average"], sort_keys=True))
    return 0


def cmd_bdrate(args) -> int:
    anchor = evaluation.read_rd_csv(args.anchor)
    test = evaluation.read_rd_csv(args.test)
    value = evaluation.bd_rate(anchor, test)
    _emit({"bd_rate_percent": round(value, 6), "method": evaluation.BD_METHOD})
    return 0


def cmd_pipeline(args) -> int:
    cfg = pipeline.RunConfig.load(args.run_config) if args.run_config else pipeline.RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    if args.model:
        cfg.model_path = args.model
    if args.qps:
        cfg.qps = list(args.qps)
    if args.tile:
        cfg.tile = args.tile
    if args.overlap is not None:
        cfg.overlap = args.overlap
    if args.inputs:
        cfg.inputs = list(args.inputs)
    out = pipeline.run(cfg)
    print(json.dumps(json.loads((out / "summary.json").read_text())["bd_rate_percent"], sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    if args.t_base is not None and args.t_ours is not None:
        _emit({"t_base": args.t_base, "t_ours": args.t_ours, "delta_t": infer.delta_t(args.t_base, args.t_ours)})
        return 0
    frame = synthetic.erp_frame(args.synth_width, args.synth_height, seed=args.seed)
    if args.model:
        params, mcfg = filternet.load_model(args.model)
    else:
        mcfg = filternet.ModelConfig.desk()
        params = filternet.init_weights(mcfg, seed=args.seed)
    plan = infer.plan_tiles(args.synth_width, args.synth_height, args.tile, args.overlap)
    t_base, t_ours = [], []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        res = encode_intra(frame, args.qp)
        mask = partition_mask(res.depth, args.synth_width, args.synth_height)
        t1 = time.perf_counter()
        infer.filter_uint8(res.recon, mask, params, mcfg, plan)
        t2 = time.perf_counter()
        t_base.append(t1 - t0)
        t_ours.append(t2 - t0)
    tb, to = float(np.median(t_base)), float(np.median(t_ours))
    _emit({"width": args.synth_width, "height": args.synth_height, "qp": args.qp, "tiles": len(plan.origins),
           "t_base": tb, "t_ours": to, "delta_t": infer.delta_t(tb, to)}, args.out)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_size(p) -> None:
    p.add_argument("--width", type=int, help="frame width for raw .y input")
    p.add_argument("--height", type=int, help="frame height for raw .y input")


def _add_train_options(p) -> None:
    d = training.TrainConfig()
    p.add_argument("inputs", nargs="*", help="ERP luma frames; synthetic frames when omitted")
    p.add_argument("--synthetic", type=int, default=8, help="number of synthetic frames without inputs")
    p.add_argument("--synth-width", type=int, default=512)
    p.add_argument("--synth-height", type=int, default=256)
    p.add_argument("--lambda", dest="lam", type=float, default=d.lam)
    p.add_argument("--patch", type=int, default=d.patch)
    p.add_argument("--middle-count", type=int, default=d.middle_count)
    p.add_argument("--pole-count", type=int, default=d.pole_count)
    p.add_argument("--qps", type=int, nargs="+", default=list(d.qps))
    p.add_argument("--viewport-fov", type=float, default=d.viewport_fov)
    p.add_argument("--viewport-loss", choices=["abs", "squared"], default=d.viewport_loss)
    p.add_argument("--lr", type=float, default=d.optimizer.learning_rate)
    p.add_argument("--decay-every", type=int, default=100_000)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--iterations", type=int, default=d.iterations)
    p.add_argument("--validate-every", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    _add_size(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="erpfilter", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file with option defaults")
        p.set_defaults(func=func)
        return p

    p = add("encode", cmd_encode, "intra-code a frame with the toy codec")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--qp", type=int, required=True)
    p.add_argument("--out", required=True, help="deblocked reconstruction (.pgm)")
    p.add_argument("--depth", help="write the CU depth map here")
    p.add_argument("--mask", help="write the partition mask here")
    p.add_argument("--pre-deblock", help="write the reconstruction before deblocking here")
    p.add_argument("--no-deblock", action="store_true")
    p.add_argument("--split-threshold", type=float, default=4.0)
    _add_size(p)

    p = add("mask", cmd_mask, "partition mask from a CU depth map")
    p.add_argument("--depth", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("filter", cmd_filter, "restore a decoded frame with a trained model")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--tile", type=int, default=infer.DEFAULT_TILE)
    p.add_argument("--overlap", type=int, default=infer.DEFAULT_OVERLAP)
    p.add_argument("--out", required=True)
    p.add_argument("--timing", help="also write the timing record to this file")
    p.add_argument("--seam-report", help="compare against whole-frame inference and write a report")
    _add_size(p)

    p = add("corpus", cmd_corpus, "build a training patch corpus")
    _add_train_options(p)
    p.add_argument("--out", required=True, help="corpus directory")

    p = add("train", cmd_train, "train the filter network")
    _add_train_options(p)
    p.add_argument("--corpus", help="manifest.jsonl from the corpus subcommand")
    p.add_argument("--arch", choices=["desk", "full"], default="desk")
    p.add_argument("--model-json", help="JSON object of model config overrides")
    p.add_argument("--init", help="start from these weights instead of a fresh init")
    p.add_argument("--val-synthetic", type=int, default=0, help="synthetic validation frames")
    p.add_argument("--val-qp", type=int, default=42)
    p.add_argument("--checkpoint-dir")
    p.add_argument("--log", help="training log CSV")
    p.add_argument("--out", required=True, help="weights file (.erpf)")

    p = add("viewport", cmd_viewport, "extract a gnomonic viewport")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--lon", type=float, default=0.0)
    p.add_argument("--lat", type=float, default=0.0)
    p.add_argument("--fov-w", type=float, default=75.0)
    p.add_argument("--fov-h", type=float, default=75.0)
    p.add_argument("--vp-width", type=int, default=256)
    p.add_argument("--vp-height", type=int, default=256)
    p.add_argument("--grid-csv", help="write per-pixel sample coordinates")
    p.add_argument("--out", required=True)
    _add_size(p)

    p = add("metrics", cmd_metrics, "PSNR, WS-PSNR and viewport PSNR")
    p.add_argument("--ref", nargs="+", required=True)
    p.add_argument("--test", nargs="+", required=True)
    p.add_argument("--viewports", help="JSON list of viewport specs")
    p.add_argument("--csv")
    p.add_argument("--json")
    _add_size(p)

    p = add("bdrate", cmd_bdrate, "Bjontegaard delta rate between two RD CSVs")
    p.add_argument("--anchor", required=True)
    p.add_argument("--test", required=True)

    p = add("pipeline", cmd_pipeline, "encode, filter and evaluate; writes an experiment directory")
    p.add_argument("--run-config", help="RunConfig JSON")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--model")
    p.add_argument("--qps", type=int, nargs="+")
    p.add_argument("--tile", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = add("bench", cmd_bench, "codec vs codec+filter timing and the relative overhead")
    p.add_argument("--model")
    p.add_argument("--synth-width", type=int, default=512)
    p.add_argument("--synth-height", type=int, default=256)
    p.add_argument("--qp", type=int, default=37)
    p.add_argument("--tile", type=int, default=infer.DEFAULT_TILE)
    p.add_argument("--overlap", type=int, default=infer.DEFAULT_OVERLAP)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-base", type=float, help="with --t-ours: only compute the overhead ratio")
    p.add_argument("--t-ours", type=float)
    p.add_argument("--out")
    return parser


def _config_path(argv: list) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in choices), None)
    path = _config_path(argv)
    if command and path:
        values = json.loads(Path(path).read_text())
        if not isinstance(values, dict):
            raise SystemExit(f"{path}: expected a JSON object")
        sub = choices[command]
        actions = {a.dest: a for a in sub._actions}
        unknown = set(values) - set(actions)
        if unknown:
            raise SystemExit(f"{path}: unknown options {sorted(unknown)}")
        for key in values:
            actions[key].required = False  # supplied by the file
        sub.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, pipeline.PipelineError) as exc:
        print(f"erpfilter {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
