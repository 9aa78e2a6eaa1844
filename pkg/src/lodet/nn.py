"""Tiny module system: named parameter trees, linear layers, MLPs."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Parameter, Tensor, relu


class Module:
    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, child in self.children():
            yield from child.named_modules(f"{prefix}.{key}" if prefix else key)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield (f"{prefix}.{key}" if prefix else key), val
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}.{key}" if prefix else key)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self) -> None:
        seen = set()
        for name, p in self.named_parameters():
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name

    def freeze(self) -> None:
        for p in self.parameters():
            p.trainable = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.trainable = True

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, arr in state.items():
            if name not in own:
                continue
            p = own[name]
            if p.shape != tuple(arr.shape):
                raise ValueError(f"{name}: shape {arr.shape} does not fit {p.shape}")
            p.data = np.array(arr, dtype=np.float32)


class Linear(Module):
    """y = x W^T + b, with W stored as [d_out, d_in]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 bias: bool = True, zero: bool = False):
        self.d_in, self.d_out = d_in, d_out
        if zero or rng is None:
            w = np.zeros((d_out, d_in), dtype=np.float32)
        else:
            bound = 1.0 / np.sqrt(d_in)
            w = rng.uniform(-bound, bound, size=(d_out, d_in)).astype(np.float32)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out, dtype=np.float32)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight.T
        return y + self.bias if self.bias is not None else y


class MLP(Module):
    """Linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator, bias: bool = True,
                 final_relu: bool = False):
        self.layers = [Linear(a, b, rng, bias=bias) for a, b in zip(dims[:-1], dims[1:])]
        self.final_relu = final_relu

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.final_relu:
                x = relu(x)
        return x
