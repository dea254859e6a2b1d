import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from erpfilter import codec, erp_geom, synthetic

QPS = (27, 32, 37, 42)


@pytest.fixture(scope="module")
def frames():
    return synthetic.erp_frames(8, 512, 256, seed=3)


def test_qstep():
    assert codec.qstep(4) == 1.0
    assert codec.qstep(37) == pytest.approx(45.2548, abs=1e-4)


def test_dct_closed_forms():
    for n in codec.TRANSFORM_SIZES:
        c = codec.dct2(np.full((n, n), 3.0))
        assert c[0, 0] == pytest.approx(n * 3.0)
        c[0, 0] = 0
        assert np.max(np.abs(c)) < 1e-9
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16, 16)) * 50
    c = codec.dct2(x)
    assert np.max(np.abs(codec.idct2(c) - x)) < 1e-10
    assert abs((x ** 2).sum() - (c ** 2).sum()) < 1e-9 * (x ** 2).sum()


@pytest.mark.parametrize("shape", [(8, 16), (4, 4), (12, 12), (128, 128)])
def test_dct_rejects_bad_blocks(shape):
    with pytest.raises(ValueError):
        codec.dct2(np.zeros(shape))


def test_se_golomb_lengths():
    # signed mapping 1->1, -1->2, 2->3, -2->4: lengths 3, 3, 5, 5
    assert list(codec.se_golomb_bits(np.array([1, -1, 2, -2, 0]))) == [3, 3, 5, 5, 1]


def test_qp_range():
    f = np.zeros((64, 64), np.uint8)
    for qp in (-1, 52, 3.5):
        with pytest.raises(ValueError):
            codec.encode_intra(f, qp)


@pytest.mark.parametrize("qp", [4, 22, 37, 51])
def test_constant_frame(qp):
    f = np.full((128, 192), 128, np.uint8)
    res = codec.encode_intra(f, qp)
    assert np.all(res.depth == 0)
    assert np.array_equal(res.recon, f)
    n_ctu = (128 // 64) * (192 // 64)
    assert res.estimated_bits == n_ctu * codec.HEADER_BITS


def test_constant_and_noise_ctus():
    rng = np.random.default_rng(1)
    f = np.full((64, 128), 90, np.uint8)
    f[:, 64:] = rng.integers(0, 256, (64, 64))
    res = codec.encode_intra(f, 32)
    assert np.all(res.depth[:, :8] == 0)
    assert np.all(res.depth[:, 8:] == 3)


def test_near_lossless_at_qp4(frames):
    for f in frames:
        assert erp_geom.psnr(f, codec.encode_intra(f, 4).recon) >= 45


def test_rate_distortion_monotone(frames):
    for f in frames:
        results = [codec.encode_intra(f, qp) for qp in QPS]
        ps = [erp_geom.psnr(f, r.recon) for r in results]
        bits = [r.estimated_bits for r in results]
        assert all(a > b for a, b in zip(ps, ps[1:])), ps
        assert all(a >= b for a, b in zip(bits, bits[1:])), bits


def test_padding_and_determinism():
    f = synthetic.erp_frame(100, 70, seed=2)
    a = codec.encode_intra(f, 32)
    b = codec.encode_intra(f, 32)
    assert a.recon.shape == f.shape
    assert a.depth.shape == (16, 16)
    assert np.array_equal(a.recon, b.recon) and np.array_equal(a.depth, b.depth)
    assert a.estimated_bits == b.estimated_bits
    padded = codec.pad_to_ctu(f)
    assert padded.shape == (128, 128) and np.all(padded[70:, :100] == f[-1])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), qp=st.integers(0, 51), tau=st.floats(0.5, 20))
def test_depth_map_is_valid_quadtree(seed, qp, tau):
    f = synthetic.erp_frame(128, 64, seed=seed)
    res = codec.encode_intra(f, qp, split_threshold=tau)
    codec.validate_quadtree(res.depth)
    assert set(np.unique(res.depth)) <= {0, 1, 2, 3}


def test_validate_quadtree_rejects_misaligned():
    d = np.zeros((8, 8), np.uint8)
    d[0, 0] = 1  # a depth-1 CU must span 4x4 cells
    with pytest.raises(ValueError):
        codec.validate_quadtree(d)
    d = np.full((8, 8), 4, np.uint8)
    with pytest.raises(ValueError):
        codec.validate_quadtree(d)


# -- deblocking -----------------------------------------------------------------

def _two_cus(left, right, size=64):
    f = np.empty((size, 2 * size), np.uint8)
    f[:, :size] = left
    f[:, size:] = right
    return f, np.zeros((size // 8, 2 * size // 8), np.uint8)


def test_deblock_constant_unchanged():
    f, d = _two_cus(100, 100)
    assert np.array_equal(codec.deblock(f, d, 37), f)


def test_deblock_preserves_strong_edge():
    f, d = _two_cus(20, 20 + 46)  # step 46 >= Qstep(37) ~ 45.25
    assert np.array_equal(codec.deblock(f, d, 37), f)


def test_deblock_smooths_small_step():
    f, d = _two_cus(100, 101)
    out = codec.deblock(f, d, 37)
    # (p1 + 2 p0 + 2 q0 + q1 + 3) // 6 = (100 + 200 + 202 + 101 + 3) // 6 = 101
    assert np.all(out[:, 63] == 101) and np.all(out[:, 64] == 101)
    assert np.array_equal(out[:, :63], f[:, :63]) and np.array_equal(out[:, 65:], f[:, 65:])


def test_deblock_only_touches_cu_boundaries():
    f = np.tile(np.arange(128, dtype=np.uint8) % 2, (64, 1)) + 100
    d = np.zeros((8, 16), np.uint8)
    out = codec.deblock(f, d, 37)
    changed = np.nonzero(np.any(out != f, axis=0))[0]
    assert set(changed) <= {63, 64}


def test_encode_reports_pre_deblock():
    f = synthetic.erp_frame(128, 64, seed=5)
    res = codec.encode_intra(f, 42)
    assert np.array_equal(codec.deblock(res.pre_deblock, res.depth, 42), res.recon)
    nodb = codec.encode_intra(f, 42, deblocking=False)
    assert np.array_equal(nodb.recon, res.pre_deblock)
