"""The distortion-aware loop-filter network.

Three stages, all at full resolution:

* feature extraction: a shared two-conv stem, then two residual branches of
  partial convolutions gated by the CU partition mask (small kernels on
  small-CU pixels, large kernels on the rest), summed and fused by a conv;
* recalibration: a cascade of residual channel-attention blocks (RCAB), each
  a depthwise-separable conv, a pooled FC/sigmoid channel gate, and a conv
  added back onto the block input;
* reconstruction: a four-conv residual block and a 1-channel output conv,
  optionally added to the input frame, clipped to [0, 1].
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .numerics import ParameterSet, Tensor, no_grad, serialize
from .numerics.ops import add, mul, reshape


@dataclass
class ModelConfig:
    channels: int = 128
    sb_kernel: int = 3
    lb_kernel: int = 5
    rcab_count: int = 4
    fc_widths: list = field(default_factory=list)
    global_skip: bool = True
    mask_renormalize: bool = False
    # ablation switches
    use_mask: bool = True
    use_fs: bool = True
    use_ar: bool = True

    def __post_init__(self):
        c = self.channels
        if not self.fc_widths:
            self.fc_widths = [4 * c, 2 * c, c, c]
        self.fc_widths = [int(v) for v in self.fc_widths]
        if c < 1:
            raise ValueError("channels must be positive")
        for name in ("sb_kernel", "lb_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be a positive odd integer, got {k}")
        if self.rcab_count < 1:
            raise ValueError("rcab_count must be at least 1")
        if len(self.fc_widths) != 4 or self.fc_widths[-1] != c:
            raise ValueError(f"fc_widths must have 4 entries ending in {c}, got {self.fc_widths}")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Laptop-sized variant: 16 channels and one RCAB."""
        base = dict(channels=16, rcab_count=1)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def parameter_shapes(cfg: ModelConfig) -> dict:
    c = cfg.channels
    shapes = {
        "stem.0.weight": (c, 1, 3, 3), "stem.0.bias": (c,),
        "stem.1.weight": (c, c, 3, 3), "stem.1.bias": (c,),
    }
    for i in range(3):
        shapes[f"sb.{i}.weight"] = (c, c, cfg.sb_kernel, cfg.sb_kernel)
    for i in range(3):
        shapes[f"lb.{i}.weight"] = (c, c, cfg.lb_kernel, cfg.lb_kernel)
    shapes["fuse.weight"] = (c, c, 3, 3)
    shapes["fuse.bias"] = (c,)
    for r in range(cfg.rcab_count):
        p = f"rcab.{r}"
        if cfg.use_fs:
            shapes[f"{p}.dw.weight"] = (c, 1, 3, 3)
            shapes[f"{p}.dw.bias"] = (c,)
            shapes[f"{p}.pw.weight"] = (c, c)
            shapes[f"{p}.pw.bias"] = (c,)
        else:
            shapes[f"{p}.fs.weight"] = (c, c, 3, 3)
            shapes[f"{p}.fs.bias"] = (c,)
        if cfg.use_ar:
            widths = [c] + cfg.fc_widths
            for k in range(4):
                shapes[f"{p}.fc.{k}.weight"] = (widths[k + 1], widths[k])
                shapes[f"{p}.fc.{k}.bias"] = (widths[k + 1],)
        shapes[f"{p}.ff.weight"] = (c, c, 3, 3)
        shapes[f"{p}.ff.bias"] = (c,)
    for k in range(4):
        shapes[f"head.{k}.weight"] = (c, c, 3, 3)
        shapes[f"head.{k}.bias"] = (c,)
    shapes["head.out.weight"] = (1, c, 3, 3)
    shapes["head.out.bias"] = (1,)
    return shapes


def init_weights(cfg: ModelConfig, seed: int = 0, dtype=np.float32,
                 identity_start: bool = True) -> ParameterSet:
    """Xavier-normal weights, zero biases.

    ``identity_start`` zeroes the output conv so that, with the global skip,
    the untrained network returns its input unchanged.
    """
    params = ParameterSet()
    for idx, (name, shape) in enumerate(parameter_shapes(cfg).items()):
        if name.endswith(".bias") or (identity_start and name == "head.out.weight"):
            params.add(name, np.zeros(shape, dtype=dtype))
        else:
            params.add(name, nx.xavier_init(shape, seed=[seed, idx], dtype=dtype))
    return params


def zero_weights(cfg: ModelConfig, dtype=np.float32) -> ParameterSet:
    return ParameterSet({n: np.zeros(s, dtype=dtype) for n, s in parameter_shapes(cfg).items()})


def check_weights(params: ParameterSet, cfg: ModelConfig) -> None:
    expected = parameter_shapes(cfg)
    missing = [n for n in expected if n not in params]
    extra = [n for n in params if n not in expected]
    if missing or extra:
        raise ValueError(f"weights do not match architecture: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if params[name].shape != tuple(shape):
            raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def _as_input(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[None, None]
    return Tensor(arr)


def _mask_array(mask, like: Tensor) -> np.ndarray:
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask).astype(like.dtype)
    if m.ndim == 2:
        m = m[None, None]
    if m.shape[2:] != like.shape[2:]:
        raise ValueError(f"mask size {m.shape[2:]} does not match frame size {like.shape[2:]}")
    return m


def branch(f0: Tensor, mask: np.ndarray | None, params: ParameterSet, prefix: str,
           cfg: ModelConfig, taps: dict | None = None) -> Tensor:
    """Residual block of three (partial) convs; ``mask=None`` runs plain convs."""
    def layer(x, k):
        w = params[f"{prefix}.{k}.weight"]
        if mask is None:
            return nx.conv2d(x, w)
        return nx.partial_conv(x, mask, w, renormalize=cfg.mask_renormalize)

    h = nx.relu(layer(f0, 0))
    if taps is not None:
        taps[f"{prefix}.0"] = h
    h = nx.relu(layer(h, 1))
    h = layer(h, 2)
    skip = f0 if mask is None else mul(f0, mask)
    return nx.relu(add(h, skip))


def feature_extraction(I, M, params: ParameterSet, cfg: ModelConfig, taps: dict | None = None) -> Tensor:
    dtype = params["stem.0.weight"].dtype
    I = _as_input(I, dtype)
    m = _mask_array(M, I)
    f0 = nx.relu(nx.conv2d(I, params["stem.0.weight"], params["stem.0.bias"]))
    f0 = nx.relu(nx.conv2d(f0, params["stem.1.weight"], params["stem.1.bias"]))
    if taps is not None:
        taps["stem"] = f0
    if cfg.use_mask:
        sb = branch(f0, m, params, "sb", cfg, taps)
        lb = branch(f0, 1 - m, params, "lb", cfg, taps)
    else:
        sb = branch(f0, None, params, "sb", cfg, taps)
        lb = branch(f0, None, params, "lb", cfg, taps)
    if taps is not None:
        taps["sb"], taps["lb"] = sb, lb
    return nx.conv2d(add(sb, lb), params["fuse.weight"], params["fuse.bias"])


def channel_gate(s: Tensor, params: ParameterSet, prefix: str, pooled=None) -> Tensor:
    """Pooled descriptor -> four FC layers (ReLU, ReLU, ReLU, sigmoid) -> per-channel scales.

    ``pooled`` replaces the spatial mean of ``s`` with a given (N, C)
    descriptor; tiled inference uses it to apply the whole-frame statistics.
    """
    z = nx.global_avg_pool(s) if pooled is None else Tensor(np.asarray(pooled, dtype=s.dtype))
    for k in range(4):
        act = "sigmoid" if k == 3 else "relu"
        z = nx.fully_connected(z, params[f"{prefix}.fc.{k}.weight"], params[f"{prefix}.fc.{k}.bias"], act)
    return z


def separate(x: Tensor, params: ParameterSet, index: int, cfg: ModelConfig) -> Tensor:
    """Feature separation stage of one RCAB."""
    p = f"rcab.{index}"
    if x.shape[1] != cfg.channels:
        raise ValueError(f"RCAB expects {cfg.channels} channels, got {x.shape[1]}")
    if cfg.use_fs:
        s = nx.depthwise_conv(x, params[f"{p}.dw.weight"], params[f"{p}.dw.bias"])
        return nx.pointwise_conv(s, params[f"{p}.pw.weight"], params[f"{p}.pw.bias"])
    return nx.conv2d(x, params[f"{p}.fs.weight"], params[f"{p}.fs.bias"])


def rcab_forward(x: Tensor, params: ParameterSet, index: int, cfg: ModelConfig,
                 taps: dict | None = None, pooled=None) -> Tensor:
    p = f"rcab.{index}"
    s = separate(x, params, index, cfg)
    if cfg.use_ar:
        z = channel_gate(s, params, p, pooled)
        if taps is not None:
            taps[f"{p}.scales"] = z
        s_hat = mul(s, reshape(z, z.shape + (1, 1)))
    else:
        s_hat = s
    if taps is not None:
        taps[f"{p}.separated"] = s
        taps[f"{p}.recalibrated"] = s_hat
    xt = nx.conv2d(s_hat, params[f"{p}.ff.weight"], params[f"{p}.ff.bias"])
    return nx.relu(add(xt, x))


def reconstruct(x: Tensor, I, params: ParameterSet, cfg: ModelConfig) -> Tensor:
    I = _as_input(I, x.dtype)
    r = x
    for k in range(4):
        r = nx.conv2d(r, params[f"head.{k}.weight"], params[f"head.{k}.bias"])
        if k < 3:
            r = nx.relu(r)
    r = nx.relu(add(r, x))
    pred = nx.conv2d(r, params["head.out.weight"], params["head.out.bias"])
    out = add(I, pred) if cfg.global_skip else pred
    return nx.clip(out, 0.0, 1.0)


def forward(I, M, params: ParameterSet, cfg: ModelConfig, taps: dict | None = None,
            pooled: dict | None = None) -> Tensor:
    """Restore a normalised luma batch I (N,1,H,W) in [0,1] guided by mask M.

    ``pooled`` optionally maps RCAB index -> (N, C) attention descriptor.
    """
    I = _as_input(I, params["stem.0.weight"].dtype)
    x = feature_extraction(I, M, params, cfg, taps)
    for i in range(cfg.rcab_count):
        x = rcab_forward(x, params, i, cfg, taps, (pooled or {}).get(i))
    return reconstruct(x, I, params, cfg)


def separated_features(I, M, params: ParameterSet, cfg: ModelConfig, index: int,
                       pooled: dict | None = None) -> Tensor:
    """Input of the attention pooling in RCAB ``index``; earlier gates use ``pooled``."""
    if not 0 <= index < cfg.rcab_count:
        raise ValueError(f"RCAB index {index} out of range")
    I = _as_input(I, params["stem.0.weight"].dtype)
    x = feature_extraction(I, M, params, cfg)
    for i in range(index):
        x = rcab_forward(x, params, i, cfg, pooled=(pooled or {}).get(i))
    return separate(x, params, index, cfg)


def receptive_radius(cfg: ModelConfig) -> int:
    """Pixels of context the deepest path reaches on each side."""
    stem = 2 * 1
    branches = 3 * (max(cfg.sb_kernel, cfg.lb_kernel) // 2)
    fuse = 1
    rcab = cfg.rcab_count * (1 + 1)  # depthwise (or plain) 3x3, then fusion 3x3
    head = 5 * 1
    return stem + branches + fuse + rcab + head


def restore(frame: np.ndarray, mask: np.ndarray, params: ParameterSet, cfg: ModelConfig) -> np.ndarray:
    """uint8 frame in, uint8 frame out."""
    dtype = params["stem.0.weight"].dtype
    I = (np.asarray(frame, dtype=dtype) / dtype.type(255))[None, None]
    with no_grad():
        out = forward(I, np.asarray(mask)[None, None], params, cfg).data[0, 0]
    return np.clip(np.rint(out * 255), 0, 255).astype(np.uint8)


def save_model(path, params: ParameterSet, cfg: ModelConfig) -> None:
    check_weights(params, cfg)
    serialize.save(path, params, cfg.to_dict())


def load_model(path, expected: ModelConfig | None = None) -> tuple[ParameterSet, ModelConfig]:
    params, raw = serialize.load(path)
    cfg = ModelConfig.from_dict(raw)
    if expected is not None and expected.to_dict() != cfg.to_dict():
        raise ValueError(f"{path}: architecture {cfg.to_dict()} differs from expected {expected.to_dict()}")
    check_weights(params, cfg)
    return params, cfg
