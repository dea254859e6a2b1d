"""Parameter containers, Xavier initialisation and the Adam optimizer."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    pass


class ParameterSet:
    """Named learnable tensors with gradient accumulators and Adam moments."""

    def __init__(self, tensors: dict | None = None):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.m: dict = {}
        self.v: dict = {}
        for name, value in (tensors or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        t = Tensor(np.array(data, copy=True), requires_grad=True, name=name)
        t.zero_grad()
        self._params[name] = t
        return t

    def bind(self, name: str, tensor: Tensor) -> Tensor:
        """Register an existing tensor without copying (e.g. a gradient-check leaf)."""
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet({k: t.data.astype(dtype) for k, t in self._params.items()})

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: t.data for k, t in self._params.items()})

    def state(self) -> dict:
        return {k: t.data for k, t in self._params.items()}

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_schedule: list = field(default_factory=list)  # [(step, lr), ...]

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 < b < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {b}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.decay_schedule = [(int(s), float(lr)) for s, lr in self.decay_schedule]
        steps = [s for s, _ in self.decay_schedule]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError(f"decay_schedule steps must be strictly increasing, got {steps}")

    def lr_at(self, step: int) -> float:
        """Learning rate in force at (1-based) ``step``; entries switch exactly at their step."""
        lr = self.learning_rate
        for s, value in self.decay_schedule:
            if step >= s:
                lr = value
            else:
                break
        return lr


def halving_schedule(learning_rate: float, every: int = 100_000, count: int = 10) -> list:
    return [(every * (i + 1), learning_rate / 2 ** (i + 1)) for i in range(count)]


def adam_step(params: ParameterSet, config: OptimizerConfig, step: int) -> float:
    """One bias-corrected Adam update in place; ``step`` counts from 1. Returns the lr used."""
    if step < 1:
        raise ValueError("adam step counter starts at 1")
    lr = config.lr_at(step)
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {name!r} at step {step}")
        m = params.m.get(name)
        if m is None:
            m = params.m[name] = np.zeros_like(p.data)
            params.v[name] = np.zeros_like(p.data)
        v = params.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
        p.data -= update.astype(p.data.dtype, copy=False)
    return lr


def fans(shape: tuple) -> tuple:
    if len(shape) < 1:
        raise ValueError("cannot compute fans of a scalar")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
        fan_out, fan_in = shape[0] * receptive, shape[1] * receptive
    return fan_in, fan_out


def xavier_init(shape: tuple, seed, dtype=np.float32) -> np.ndarray:
    """Xavier (Glorot) normal samples with variance 2 / (fan_in + fan_out)."""
    fan_in, fan_out = fans(tuple(shape))
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError(f"zero fan for shape {shape}")
    std = math.sqrt(2.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return (rng.standard_normal(shape) * std).astype(dtype)
