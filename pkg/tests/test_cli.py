import json

import numpy as np
import pytest

from erpfilter import cli, evaluation, filternet, imageio, synthetic


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


@pytest.fixture
def frame(tmp_path):
    p = tmp_path / "f.pgm"
    imageio.write_pgm(p, synthetic.erp_frame(192, 128, seed=5))
    return p


def test_encode_and_mask(tmp_path, capsys, frame):
    code, out = run(capsys, "encode", "--in", frame, "--qp", 37, "--out", tmp_path / "r.pgm",
                    "--depth", tmp_path / "d.txt", "--mask", tmp_path / "m.pgm")
    assert code == 0
    info = json.loads(out)
    assert info["qp"] == 37 and info["width"] == 192 and info["estimated_bits"] > 0
    code, out = run(capsys, "mask", "--depth", tmp_path / "d.txt", "--width", 192, "--height", 128,
                    "--out", tmp_path / "m2.pgm")
    assert code == 0
    assert (tmp_path / "m.pgm").read_bytes() == (tmp_path / "m2.pgm").read_bytes()


def test_config_file_sets_defaults_and_flags_override(tmp_path, capsys, frame):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"input": str(frame), "qp": 42, "out": str(tmp_path / "a.pgm")}))
    _, out = run(capsys, "encode", "--config", cfg)
    assert json.loads(out)["qp"] == 42
    _, out = run(capsys, "encode", "--config", cfg, "--qp", 27, "--out", tmp_path / "b.pgm")
    assert json.loads(out)["qp"] == 27
    cfg.write_text(json.dumps({"qpp": 3}))
    with pytest.raises(SystemExit, match="unknown options"):
        cli.main(["encode", "--config", str(cfg)])


def test_filter_timing_and_seam_report(tmp_path, capsys, frame):
    run(capsys, "encode", "--in", frame, "--qp", 42, "--out", tmp_path / "r.pgm", "--mask", tmp_path / "m.pgm")
    cfg = filternet.ModelConfig.desk()
    filternet.save_model(tmp_path / "w.erpf", filternet.init_weights(cfg, seed=1, identity_start=False), cfg)
    code, out = run(capsys, "filter", "--in", tmp_path / "r.pgm", "--mask", tmp_path / "m.pgm",
                    "--model", tmp_path / "w.erpf", "--tile", 64, "--overlap", 20, "--out", tmp_path / "o.pgm",
                    "--timing", tmp_path / "t.json", "--seam-report", tmp_path / "s.json")
    assert code == 0
    timing = json.loads((tmp_path / "t.json").read_text())
    assert json.loads(out) == timing and timing["stage"] == "filter"
    seams = json.loads((tmp_path / "s.json").read_text())
    assert seams["tile"] == 64 and seams["overlap"] == 20 and not seams["exact_expected"]
    assert imageio.read_pgm(tmp_path / "o.pgm").shape == (128, 192)


def test_filter_rejects_bad_plan(tmp_path, capsys, frame):
    run(capsys, "encode", "--in", frame, "--qp", 42, "--out", tmp_path / "r.pgm", "--mask", tmp_path / "m.pgm")
    cfg = filternet.ModelConfig.desk()
    filternet.save_model(tmp_path / "w.erpf", filternet.zero_weights(cfg), cfg)
    code = cli.main(["filter", "--in", str(tmp_path / "r.pgm"), "--mask", str(tmp_path / "m.pgm"),
                     "--model", str(tmp_path / "w.erpf"), "--tile", "30", "--overlap", "20",
                     "--out", str(tmp_path / "o.pgm")])
    assert code == 2
    assert "overlap" in capsys.readouterr().err


TRAIN = ["--synthetic", 1, "--synth-width", 256, "--synth-height", 256, "--qps", 42,
         "--middle-count", 1, "--pole-count", 1, "--batch-size", 2, "--iterations", 2, "--lr", 1e-3]
MODEL = ["--model-json", '{"channels": 4}']


def test_corpus_and_train_reproducible_with_seed(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "corpus", *TRAIN, "--seed", 3, "--out", tmp_path / f"c{name}")[0] == 0
        assert run(capsys, "train", *TRAIN, *MODEL, "--seed", 3, "--log", tmp_path / f"{name}.csv",
                   "--out", tmp_path / f"{name}.erpf")[0] == 0
    assert (tmp_path / "ca" / "manifest.jsonl").read_bytes() == (tmp_path / "cb" / "manifest.jsonl").read_bytes()
    assert (tmp_path / "a.erpf").read_bytes() == (tmp_path / "b.erpf").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    run(capsys, "train", *TRAIN, *MODEL, "--seed", 4, "--out", tmp_path / "c.erpf")
    assert (tmp_path / "a.erpf").read_bytes() != (tmp_path / "c.erpf").read_bytes()


def test_train_from_corpus_manifest(tmp_path, capsys):
    run(capsys, "corpus", *TRAIN, "--out", tmp_path / "c")
    code, out = run(capsys, "train", *TRAIN, *MODEL, "--corpus", tmp_path / "c" / "manifest.jsonl",
                    "--out", tmp_path / "m.erpf")
    assert code == 0 and json.loads(out)["records"] == 2
    params, cfg = filternet.load_model(tmp_path / "m.erpf")
    assert cfg.channels == 4


def test_viewport_and_metrics(tmp_path, capsys, frame):
    code, out = run(capsys, "viewport", "--in", frame, "--lon", 90, "--vp-width", 32, "--vp-height", 24,
                    "--out", tmp_path / "v.pgm", "--grid-csv", tmp_path / "g.csv")
    assert code == 0 and json.loads(out)["lon"] == 90
    assert imageio.read_pgm(tmp_path / "v.pgm").shape == (24, 32)
    assert len((tmp_path / "g.csv").read_text().splitlines()) > 24 * 32
    f = imageio.read_pgm(frame)
    imageio.write_pgm(tmp_path / "plus1.pgm", np.clip(f.astype(int) + 1, 0, 255).astype(np.uint8))
    code, out = run(capsys, "metrics", "--ref", frame, "--test", frame, "--csv", tmp_path / "m.csv",
                    "--json", tmp_path / "m.json")
    assert code == 0 and json.loads(out)["ws_psnr"] == "inf"
    assert cli.main(["metrics", "--ref", str(frame), "--test", str(frame), str(frame)]) == 2


def test_bdrate(tmp_path, capsys):
    anchor = [evaluation.RDPoint(r, q) for r, q in [(1000, 30.0), (1800, 33.1), (3000, 36.0), (5200, 38.7)]]
    evaluation.write_rd_csv(tmp_path / "a.csv", anchor)
    evaluation.write_rd_csv(tmp_path / "b.csv", [evaluation.RDPoint(p.bitrate * 1.1, p.quality) for p in anchor])
    _, out = run(capsys, "bdrate", "--anchor", tmp_path / "a.csv", "--test", tmp_path / "a.csv")
    assert json.loads(out)["bd_rate_percent"] == 0.0
    _, out = run(capsys, "bdrate", "--anchor", tmp_path / "a.csv", "--test", tmp_path / "b.csv")
    assert json.loads(out)["bd_rate_percent"] == pytest.approx(10.0, abs=0.01)


def test_pipeline_subcommand(tmp_path, capsys):
    rc = tmp_path / "run.json"
    rc.write_text(json.dumps({"synthetic": {"count": 1, "width": 128, "height": 64, "seed": 1}}))
    for name in ("a", "b"):
        code, out = run(capsys, "pipeline", "--run-config", rc, "--seed", 2, "--out", tmp_path / name)
        assert code == 0 and json.loads(out)["ws_psnr"] == 0.0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert json.loads((tmp_path / "a" / "config.json").read_text())["seed"] == 2
    assert cli.main(["pipeline", "--model", str(tmp_path / "nope.erpf"), "--out", str(tmp_path / "c")]) == 2


def test_bench(tmp_path, capsys):
    _, out = run(capsys, "bench", "--t-base", 0.36, "--t-ours", 9.67)
    assert round(json.loads(out)["delta_t"] * 100) == 2586
    code, out = run(capsys, "bench", "--synth-width", 128, "--synth-height", 64, "--repeat", 1,
                    "--out", tmp_path / "b.json")
    rec = json.loads(out)
    assert code == 0 and rec["tiles"] == 1 and rec["t_ours"] >= rec["t_base"]
