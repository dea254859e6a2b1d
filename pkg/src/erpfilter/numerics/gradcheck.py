"""Central finite-difference verification of analytic gradients.

ReLU, clip and abs make the network piecewise smooth. A central difference
whose +/-eps segment crosses a kink does not estimate the derivative, so
each probe records the branch pattern of every piecewise operator at
x - h, x and x + h and only counts when all three agree. The step starts at
eps and is divided by four while the segment straddles a kink (down to
``min_step``); probes that never become smooth are reported as skipped.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad, record_kinks


@dataclass
class GradCheck:
    errors: list = field(default_factory=list)  # one relative error per input array
    probed: list = field(default_factory=list)  # smooth probes used per array
    skipped: list = field(default_factory=list)  # probes rejected for straddling a kink
    shrunk: list = field(default_factory=list)  # probes that needed a step below eps

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|); 0 when both vanish."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _same(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(build: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray],
                    eps: float = 1e-4, max_entries: int | None = None, seed: int = 0,
                    max_attempts: int | None = None, min_step: float = 1e-8) -> GradCheck:
    """Compare backward() against central differences for every input array.

    ``build`` maps leaf tensors (one per array, same order) to a scalar.
    Arrays are perturbed in place and restored. With ``max_entries`` only
    that many randomly chosen smooth probes per array are used.
    """
    for a in arrays:
        if not (isinstance(a, np.ndarray) and a.flags.c_contiguous and a.flags.writeable):
            raise ValueError("gradient check arrays must be writeable C-contiguous numpy arrays")
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with record_kinks() as base:
        loss = build(leaves)
    base = list(base)
    loss.backward()
    rng = np.random.default_rng(seed)

    def evaluate():
        with no_grad(), record_kinks() as pattern:
            value = float(build([Tensor(a) for a in arrays]).data)
        return value, list(pattern)

    result = GradCheck()
    for arr, leaf in zip(arrays, leaves):
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        order = rng.permutation(arr.size)
        want = arr.size if max_entries is None else min(max_entries, arr.size)
        attempts = len(order) if max_attempts is None else min(max_attempts, len(order))
        analytic, numeric, skipped, shrunk = [], [], 0, 0
        flat = arr.reshape(-1)  # view; arrays must be contiguous
        for pos in order[:attempts]:
            if len(analytic) == want:
                break
            orig = flat[pos]
            h = eps
            while True:
                flat[pos] = orig + h
                fp, pat_p = evaluate()
                flat[pos] = orig - h
                fm, pat_m = evaluate()
                flat[pos] = orig
                smooth = _same(pat_p, base) and _same(pat_m, base)
                if smooth or h / 4 < min_step:
                    break
                h /= 4
            if not smooth:
                skipped += 1
                continue
            if h < eps:
                shrunk += 1
            analytic.append(grad.reshape(-1)[pos])
            numeric.append((fp - fm) / (2 * h))
        result.errors.append(relative_error(np.array(analytic), np.array(numeric)))
        result.probed.append(len(analytic))
        result.skipped.append(skipped)
        result.shrunk.append(shrunk)
    return result
