"""Parameter containers and weight initialization."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor


class Module:
    """Holds :class:`Tensor` parameters and child modules as attributes.

    Parameters are enumerated in attribute insertion order, which fixes
    both initialization order and checkpoint layout.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = params.keys() - state.keys()
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


class Init:
    """Seeded initializer: truncated normal (std 0.02, cut at 2 std) for weights."""

    def __init__(self, seed: int = 0, dtype=np.float32, std: float = 0.02):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype
        self.std = std

    def trunc_normal(self, *shape: int) -> Tensor:
        x = self.rng.standard_normal(shape)
        bad = np.abs(x) > 2.0
        while bad.any():
            x[bad] = self.rng.standard_normal(int(bad.sum()))
            bad = np.abs(x) > 2.0
        return Tensor((x * self.std).astype(self.dtype), requires_grad=True)

    def zeros(self, *shape: int) -> Tensor:
        return Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)

    def ones(self, *shape: int) -> Tensor:
        return Tensor(np.ones(shape, dtype=self.dtype), requires_grad=True)


class LayerNormParams(Module):
    def __init__(self, init: Init, dim: int):
        self.weight = init.ones(dim)
        self.bias = init.zeros(dim)
