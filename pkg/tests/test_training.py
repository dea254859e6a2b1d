import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erpfilter import filternet, synthetic, training
from erpfilter.numerics import OptimizerConfig, Tensor


@pytest.fixture(scope="module")
def frames():
    return synthetic.erp_frames(4, 512, 256, seed=21)


def small_corpus_cfg(**kw):
    return training.TrainConfig(**{"qps": (42,), "middle_count": 2, "pole_count": 2, **kw})


# -- corpus -------------------------------------------------------------------

def test_corpus_counts_bands_and_overlap(frames):
    cfg = small_corpus_cfg(seed=3)
    corpus = training.build_corpus(frames[:1], cfg)
    assert len(corpus) == 4 and not corpus.warnings
    h = 256
    for rec in corpus:
        assert rec.Y.shape == rec.I.shape == rec.mask.shape == rec.G.shape == (64, 64)
        r, c = rec.origin
        assert 0 <= r <= h - 64 and 0 <= c <= 512 - 64
        if rec.band == "middle":
            assert h // 4 <= r <= 3 * h // 4 - 64
        else:
            assert r + 64 <= h // 4 or r >= 3 * h // 4
    recs = list(corpus)
    for i, a in enumerate(recs):
        for b in recs[i + 1:]:
            if a.band == b.band:
                assert abs(a.origin[0] - b.origin[0]) >= 64 or abs(a.origin[1] - b.origin[1]) >= 64


def test_corpus_records_match_frame(frames):
    corpus = training.build_corpus(frames[:1], small_corpus_cfg())
    g = np.cos((np.arange(256) - 128 + 0.5) * np.pi / 256)
    g = np.repeat(g[:, None], 512, axis=1)
    g /= g.sum()
    for rec in corpus:
        r, c = rec.origin
        assert np.array_equal(rec.Y, frames[0][r:r + 64, c:c + 64])
        np.testing.assert_allclose(rec.G, g[r:r + 64, c:c + 64], rtol=1e-12)
        assert set(np.unique(rec.mask)) <= {0, 1}


def test_corpus_deterministic(frames):
    a = training.build_corpus(frames[:2], small_corpus_cfg(seed=5))
    b = training.build_corpus(frames[:2], small_corpus_cfg(seed=5))
    assert [r.key for r in a] == [r.key for r in b]
    c = training.build_corpus(frames[:2], small_corpus_cfg(seed=6))
    assert [r.key for r in a] != [r.key for r in c]


def test_corpus_warns_when_frame_too_small():
    f = synthetic.erp_frame(128, 128, seed=1)
    corpus = training.build_corpus([f], small_corpus_cfg(middle_count=5, pole_count=1))
    assert corpus.warnings
    assert sum(r.band == "pole" for r in corpus) == 0  # pole bands are only 32 rows tall


def test_corpus_manifest_round_trip(tmp_path, frames):
    corpus = training.build_corpus(frames[:1], small_corpus_cfg())
    manifest = training.write_corpus(corpus, tmp_path / "c")
    lines = manifest.read_text().splitlines()
    assert len(lines) == len(corpus)
    back = training.read_corpus(manifest)
    for a, b in zip(corpus, back):
        assert a.key == b.key and np.array_equal(a.Y, b.Y) and np.array_equal(a.G, b.G)


def test_train_config_validation():
    with pytest.raises(ValueError):
        training.TrainConfig(lam=-1)
    with pytest.raises(ValueError):
        training.TrainConfig(patch=12)
    with pytest.raises(ValueError):
        training.TrainConfig(viewport_loss="huber")
    cfg = training.TrainConfig()
    assert (cfg.lam, cfg.patch, cfg.middle_count, cfg.pole_count, cfg.viewport_fov) == (0.5, 64, 50, 30, 5.0)
    assert cfg.qps == (27, 32, 37, 42) and cfg.optimizer.learning_rate == 1e-4


# -- loss -----------------------------------------------------------------------

def test_loss_arithmetic():
    y = np.zeros((1, 1, 1, 1))
    t = training.distortion_aware_loss(y, Tensor(np.full((1, 1, 1, 1), 2.0)), np.full((1, 1, 1, 1), 0.25), lam=0)
    assert float(t.total.data) == 1.0
    rng = np.random.default_rng(0)
    Y = rng.random((2, 1, 8, 8))
    z = training.distortion_aware_loss(Y, Tensor(Y.copy()), rng.random(Y.shape), lam=0.5)
    assert float(z.total.data) == 0.0
    with pytest.raises(ValueError):
        training.distortion_aware_loss(Y, Tensor(Y[:, :, :4]), rng.random(Y.shape))


def _sampler(n=2, p=16):
    recs = [training.PatchRecord(Y=np.zeros((p, p), np.uint8), I=None, mask=None, G=None,
                                 origin=(10 + 20 * i, 30 * i), qp=42, image=0, band="pole",
                                 frame_size=(256, 128)) for i in range(n)]
    return training.viewport_sampler(recs, 5.0)


def test_loss_combines_terms():
    rng = np.random.default_rng(1)
    Y = rng.random((2, 1, 16, 16))
    R = Tensor(rng.random((2, 1, 16, 16)))
    G = rng.random(Y.shape)
    s = _sampler()
    t = training.distortion_aware_loss(Y, R, G, s, lam=0.5)
    assert float(t.total.data) == pytest.approx(float(t.wmse.data) + 0.5 * float(t.viewport.data), rel=1e-12)
    want_re = np.mean((Y - R.data) ** 2 * G)
    want_v = np.mean(np.abs(s.sample(R.data) - s.sample(Y)))
    assert float(t.wmse.data) == pytest.approx(want_re, rel=1e-12)
    assert float(t.viewport.data) == pytest.approx(want_v, rel=1e-12)
    sq = training.distortion_aware_loss(Y, R, G, s, lam=0.5, mode="squared")
    assert float(sq.viewport.data) == pytest.approx(np.mean((s.sample(R.data) - s.sample(Y)) ** 2), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_loss_nonnegative_and_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    Y, R, G = rng.random((3, 2, 1, 16, 16))
    s = _sampler()
    assert float(training.distortion_aware_loss(Y, Tensor(R), G, s).total.data) >= 0
    perm = rng.permutation(16 * 16)

    def shuffle(a):
        return a.reshape(2, 1, -1)[:, :, perm].reshape(a.shape)

    a = float(training.distortion_aware_loss(Y, Tensor(R), G, lam=0).wmse.data)
    b = float(training.distortion_aware_loss(shuffle(Y), Tensor(shuffle(R)), shuffle(G), lam=0).wmse.data)
    assert a == pytest.approx(b, rel=1e-12)


def test_viewport_taps_stay_inside_patch():
    s = _sampler(3, 32)
    assert s.index.min() >= 0 and s.index.max() < 32 * 32
    np.testing.assert_allclose(s.weights.sum(axis=-1), 1.0)
    # a 5 degree field on a 256-pixel-wide frame spans about 4 pixels around the centre
    rows, cols = np.divmod(s.index[0, :, 0], 32)
    assert abs(rows.mean() - 15.5) < 2 and abs(cols.mean() - 15.5) < 2


# -- optimisation ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_corpus(frames):
    return training.build_corpus(frames[:1], small_corpus_cfg(middle_count=2, pole_count=2))


def test_training_deterministic_and_lambda_zero(tiny_corpus):
    mc = filternet.ModelConfig.desk(channels=4)
    cfg = training.TrainConfig(qps=(42,), batch_size=2, iterations=4, seed=1, optimizer=OptimizerConfig(1e-3))
    a = training.train(tiny_corpus, filternet.init_weights(mc, seed=1), mc, cfg)
    b = training.train(tiny_corpus, filternet.init_weights(mc, seed=1), mc, cfg)
    assert a.history == b.history
    for name, p in a.params.items():
        assert np.array_equal(p.data, b.params[name].data)
    cfg0 = training.TrainConfig(lam=0.0, qps=(42,), batch_size=2, iterations=4, seed=1,
                                optimizer=OptimizerConfig(1e-3))
    z = training.train(tiny_corpus, filternet.init_weights(mc, seed=1), mc, cfg0)
    assert all(e["L"] == e["L_re"] and e["L_v"] == 0 for e in z.history)


def test_training_aborts_on_nan(tiny_corpus):
    mc = filternet.ModelConfig.desk(channels=4)
    ps = filternet.init_weights(mc, seed=2)
    ps["stem.0.weight"].data[0, 0, 0, 0] = np.nan
    cfg = training.TrainConfig(qps=(42,), batch_size=2, iterations=3)
    with pytest.raises(training.TrainingDivergedError, match=r"step 1; records \['img0-qp42"):
        training.train(tiny_corpus, ps, mc, cfg)


def test_training_rejects_empty_corpus():
    mc = filternet.ModelConfig.desk(channels=4)
    with pytest.raises(ValueError):
        training.train([], filternet.init_weights(mc), mc, training.TrainConfig())


def test_history_csv_checkpoints_and_validation(tmp_path, tiny_corpus, frames):
    mc = filternet.ModelConfig.desk(channels=4)
    cfg = training.TrainConfig(qps=(42,), batch_size=2, iterations=4, checkpoint_every=2, validate_every=2,
                               optimizer=OptimizerConfig(1e-3))
    val = training.validation_set([frames[3][:128, :256]], 42)
    res = training.train(tiny_corpus, filternet.init_weights(mc), mc, cfg, validation=val,
                         checkpoint_dir=tmp_path / "ck")
    assert sorted(p.name for p in (tmp_path / "ck").iterdir()) == ["step0000002.erpf", "step0000004.erpf"]
    assert [v["step"] for v in res.validation] == [2, 4]
    training.write_history_csv(res.history, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "step,L,L_re,L_v,lr" and len(lines) == 5


def test_smoothed():
    np.testing.assert_allclose(training.smoothed([1, 2, 3, 4], 2), [1, 1.5, 2.5, 3.5])


@pytest.mark.slow
def test_training_descends(frames):
    cfg = training.TrainConfig(qps=(42,), batch_size=8, iterations=200, seed=0, optimizer=OptimizerConfig(1e-3))
    corpus = training.build_corpus(frames, cfg)
    mc = filternet.ModelConfig.desk()
    res = training.train(corpus, filternet.init_weights(mc, seed=0), mc, cfg)
    s = training.smoothed([e["L"] for e in res.history], 50)
    assert s[199] < s[49]
