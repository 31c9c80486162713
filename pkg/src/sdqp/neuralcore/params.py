"""Named parameter sets with gradient slots, dropout RNG and Adam state."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParamSet:
    """Holds leaf tensors (with persistent gradient slots), the dropout RNG
    stream and the Adam moment buffers / step counter."""

    def __init__(self, dtype=np.float32, seed: int = 0):
        self.dtype = np.dtype(dtype)
        self.params: dict = {}
        self.adam_m: dict = {}
        self.adam_v: dict = {}
        self.step = 0
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        self.adam_m[name] = np.zeros_like(t.data)
        self.adam_v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list:
        return list(self.params)

    def zero_grads(self) -> None:
        for t in self.params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            else:
                t.grad[...] = 0

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def copy_values(self) -> dict:
        """Snapshot of parameter arrays (for checkpoint selection)."""
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_values(self, values: dict) -> None:
        for name, arr in values.items():
            self.params[name].data[...] = arr

    def clone(self) -> "ParamSet":
        other = ParamSet(dtype=self.dtype)
        for name, t in self.params.items():
            other.add(name, t.data.copy())
            other.adam_m[name][...] = self.adam_m[name]
            other.adam_v[name][...] = self.adam_v[name]
        other.step = self.step
        other.rng.bit_generator.state = self.rng.bit_generator.state
        return other

    def astype(self, dtype) -> "ParamSet":
        """Copy with a different storage dtype (float64 for verification)."""
        other = ParamSet(dtype=dtype)
        for name, t in self.params.items():
            other.add(name, t.data.astype(dtype))
        other.step = self.step
        other.rng.bit_generator.state = self.rng.bit_generator.state
        return other


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def adam_step(params: ParamSet, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update; increments the step counter and zeroes grads."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.params.items():
        g = p.grad  # leaf tensors always carry a gradient slot
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype, copy=False)
        p.data -= update
        p.grad[...] = 0
