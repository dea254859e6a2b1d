"""A small block-DCT intra codec standing in for an HEVC encoder.

Each 64x64 CTU is split into a quadtree of CUs (depth 0..3, 64 down to 8
pixels) by a variance rule, every leaf is DC-predicted from already
reconstructed neighbours, and the residual goes through an orthonormal
DCT-II, a uniform quantizer with the HEVC step size, and back. A light
deblocking pass then smooths weak steps across CU boundaries. The bit count
is an Exp-Golomb length proxy, not a real bitstream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft

CTU = 64
CELL = 8
MAX_DEPTH = 3
HEADER_BITS = 8
TRANSFORM_SIZES = (8, 16, 32, 64)


def qstep(qp: float) -> float:
    return 2.0 ** ((qp - 4) / 6.0)


def _check_block(block: np.ndarray) -> None:
    if block.ndim != 2 or block.shape[0] != block.shape[1] or block.shape[0] not in TRANSFORM_SIZES:
        raise ValueError(f"transform blocks must be square with size in {TRANSFORM_SIZES}, got {block.shape}")


def dct2(block: np.ndarray) -> np.ndarray:
    block = np.asarray(block, dtype=np.float64)
    _check_block(block)
    return fft.dctn(block, type=2, norm="ortho")


def idct2(coef: np.ndarray) -> np.ndarray:
    coef = np.asarray(coef, dtype=np.float64)
    _check_block(coef)
    return fft.idctn(coef, type=2, norm="ortho")


def se_golomb_bits(levels: np.ndarray) -> np.ndarray:
    """Signed Exp-Golomb code length of each integer level."""
    v = np.asarray(levels, dtype=np.int64)
    code = np.where(v > 0, 2 * v - 1, -2 * v)
    return 2 * np.floor(np.log2(code + 1)).astype(np.int64) + 1


@dataclass
class CodecResult:
    recon: np.ndarray  # uint8, input dimensions, after deblocking
    depth: np.ndarray  # uint8 per 8x8 cell over the CTU-padded frame
    estimated_bits: int
    qp: int
    pre_deblock: np.ndarray | None = None


def pad_to_ctu(frame: np.ndarray) -> np.ndarray:
    h, w = frame.shape
    ph = (-h) % CTU
    pw = (-w) % CTU
    if ph == 0 and pw == 0:
        return frame
    return np.pad(frame, ((0, ph), (0, pw)), mode="edge")


class _Encoder:
    def __init__(self, frame: np.ndarray, qp: int, split_threshold: float):
        self.orig = frame.astype(np.float64)
        self.recon = np.zeros(frame.shape, dtype=np.int64)
        self.q = qstep(qp)
        self.split_at = split_threshold * self.q
        h, w = frame.shape
        self.depth = np.zeros((h // CELL, w // CELL), dtype=np.uint8)
        self.bits = 0

    def run(self) -> None:
        h, w = self.orig.shape
        for y in range(0, h, CTU):
            for x in range(0, w, CTU):
                self._cu(y, x, CTU, 0)

    def _cu(self, y: int, x: int, size: int, d: int) -> None:
        block = self.orig[y:y + size, x:x + size]
        if d < MAX_DEPTH and block.var() > self.split_at:
            half = size // 2
            for dy, dx in ((0, 0), (0, half), (half, 0), (half, half)):
                self._cu(y + dy, x + dx, half, d + 1)
            return
        self.depth[y // CELL:(y + size) // CELL, x // CELL:(x + size) // CELL] = d
        self._code_leaf(y, x, size, block)

    def _predict(self, y: int, x: int, size: int) -> int:
        refs = []
        if y > 0:
            refs.append(self.recon[y - 1, x:x + size])
        if x > 0:
            refs.append(self.recon[y:y + size, x - 1])
        if not refs:
            return 128
        return int(np.floor(np.concatenate(refs).mean() + 0.5))

    def _code_leaf(self, y: int, x: int, size: int, block: np.ndarray) -> None:
        pred = self._predict(y, x, size)
        coef = dct2(block - pred)
        levels = (np.sign(coef) * np.floor(np.abs(coef) / self.q + 0.5)).astype(np.int64)
        nz = levels[levels != 0]
        self.bits += HEADER_BITS + int(se_golomb_bits(nz).sum())
        rec = pred + idct2(levels * self.q) if nz.size else np.full(block.shape, float(pred))
        self.recon[y:y + size, x:x + size] = np.clip(np.rint(rec), 0, 255).astype(np.int64)


def encode_intra(frame: np.ndarray, qp: int, split_threshold: float = 4.0,
                 deblocking: bool = True) -> CodecResult:
    """Intra-code one luma frame; the returned reconstruction is deblocked."""
    if not 0 <= int(qp) <= 51 or int(qp) != qp:
        raise ValueError(f"qp must be an integer in [0, 51], got {qp}")
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ValueError(f"expected a 2-D luma frame, got shape {frame.shape}")
    h, w = frame.shape
    enc = _Encoder(pad_to_ctu(frame), int(qp), split_threshold)
    enc.run()
    pre = enc.recon.astype(np.uint8)
    out = deblock(pre, enc.depth, int(qp)) if deblocking else pre.copy()
    return CodecResult(recon=out[:h, :w].copy(), depth=enc.depth, estimated_bits=enc.bits,
                       qp=int(qp), pre_deblock=pre[:h, :w].copy())


# ---------------------------------------------------------------------------
# quadtree bookkeeping
# ---------------------------------------------------------------------------

def validate_quadtree(depth: np.ndarray) -> None:
    """Raise ValueError unless every CTU of ``depth`` is a valid CU quadtree."""
    depth = np.asarray(depth)
    cells = CTU // CELL
    if depth.ndim != 2 or depth.shape[0] % cells or depth.shape[1] % cells:
        raise ValueError(f"depth map shape {depth.shape} is not a whole number of {cells}x{cells}-cell CTUs")
    if depth.size and (depth.min() < 0 or depth.max() > MAX_DEPTH):
        raise ValueError(f"depth values must lie in 0..{MAX_DEPTH}")

    def check(r: int, c: int, n: int, d: int) -> None:
        v = depth[r, c]
        if v == d:
            if not np.all(depth[r:r + n, c:c + n] == d):
                raise ValueError(f"CU at cell ({r},{c}) of depth {d} is not uniform")
        elif v > d and n > 1:
            h = n // 2
            for dr, dc in ((0, 0), (0, h), (h, 0), (h, h)):
                check(r + dr, c + dc, h, d + 1)
        else:
            raise ValueError(f"cell ({r},{c}) has depth {v} inside a depth-{d} region")

    for r in range(0, depth.shape[0], cells):
        for c in range(0, depth.shape[1], cells):
            check(r, c, cells, 0)


def _cu_origin(depth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    span = (CTU // CELL) >> depth.astype(np.int64)
    rows, cols = np.indices(depth.shape)
    return rows // span * span, cols // span * span


def cu_boundaries(depth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Boolean cell-edge maps: vert[r, c] is True when cells (r, c-1) and (r, c)
    belong to different CUs (c >= 1); horiz[r, c] likewise for rows."""
    depth = np.asarray(depth)
    orow, ocol = _cu_origin(depth)
    key = (orow * depth.shape[1] + ocol) * 4 + depth
    vert = np.zeros(depth.shape, dtype=bool)
    horiz = np.zeros(depth.shape, dtype=bool)
    vert[:, 1:] = key[:, 1:] != key[:, :-1]
    horiz[1:, :] = key[1:, :] != key[:-1, :]
    return vert, horiz


def deblock(frame: np.ndarray, depth: np.ndarray, qp: int) -> np.ndarray:
    """Smooth weak steps (|p0 - q0| < Qstep) across leaf-CU boundaries.

    Vertical edges are filtered first, then horizontal edges on that result.
    Both boundary samples become (p1 + 2 p0 + 2 q0 + q1) / 6, rounded.
    """
    out = np.asarray(frame).astype(np.int64)
    h, w = out.shape
    beta = qstep(qp)
    vert, horiz = cu_boundaries(depth)

    def filter_edges(img: np.ndarray, edges: np.ndarray) -> np.ndarray:
        res = img.copy()
        length = img.shape[1]
        for r, c in zip(*np.nonzero(edges)):
            x = c * CELL
            if x < 2 or x + 1 >= length:
                continue
            rows = slice(r * CELL, min((r + 1) * CELL, img.shape[0]))
            p1, p0, q0, q1 = (img[rows, x - 2], img[rows, x - 1], img[rows, x], img[rows, x + 1])
            weak = np.abs(p0 - q0) < beta
            smooth = (p1 + 2 * p0 + 2 * q0 + q1 + 3) // 6
            res[rows, x - 1] = np.where(weak, smooth, p0)
            res[rows, x] = np.where(weak, smooth, q0)
        return res

    out = filter_edges(out, vert[: -(-h // CELL), : -(-w // CELL)])
    out = filter_edges(out.T, horiz[: -(-h // CELL), : -(-w // CELL)].T).T
    return np.clip(out, 0, 255).astype(np.uint8)
