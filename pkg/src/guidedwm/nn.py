"""Parameter containers built on :mod:`guidedwm.tensor`."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor, get_default_dtype


class Module:
    """Attribute-based parameter tree, walked in attribute insertion order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=p.dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def param(data: np.ndarray, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_default_dtype()), requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 zero_init: bool = False, scale: float | None = None):
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            std = scale if scale is not None else 1.0 / np.sqrt(d_in)
            w = rng.normal(0.0, std, size=(d_in, d_out))
        self.weight = param(w)
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.affine(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, affine: bool = True, eps: float = 1e-5):
        self.eps = eps
        self.weight = param(np.ones(dim)) if affine else None
        self.bias = param(np.zeros(dim)) if affine else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, self.eps)


class MLP(Module):
    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 bias: bool = True, zero_out: bool = False):
        self.fc1 = Linear(d_in, d_hidden, rng, bias=bias)
        self.fc2 = Linear(d_hidden, d_out, rng, bias=bias, zero_init=zero_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))
