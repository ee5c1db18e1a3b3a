"""Parameter containers shared by the language model, encoders and projection."""
from __future__ import annotations

import numpy as np

from . import container
from .tensor import Tensor, default_dtype, gelu, matmul


class Module:
    """A flat, ordered dictionary of named parameter tensors."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.frozen = False

    def add_param(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        t = Tensor(np.asarray(value, dtype=default_dtype()), requires_grad=trainable and not self.frozen, name=name)
        self.params[name] = t
        return t

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def trainable(self) -> list[Tensor]:
        return [p for p in self.params.values() if p.requires_grad]

    def freeze(self) -> "Module":
        self.frozen = True
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self) -> "Module":
        self.frozen = False
        for p in self.params.values():
            p.requires_grad = True
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"missing tensors: {sorted(missing)[:5]}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def content_hash(self) -> str:
        return container.content_hash({k: v.data for k, v in self.params.items()})

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))


def fan_in_normal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, gain / np.sqrt(fan_in), size=(fan_in, fan_out))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y + b if b is not None else y


def mlp_forward(x: Tensor, module: Module, prefix: str, n_layers: int, act=gelu, final_act: bool = False) -> Tensor:
    """Apply ``n_layers`` dense layers named ``{prefix}{i}.w`` / ``{prefix}{i}.b``."""
    h = x
    for i in range(n_layers):
        h = linear(h, module.params[f"{prefix}{i}.w"], module.params[f"{prefix}{i}.b"])
        if i < n_layers - 1 or final_act:
            h = act(h)
    return h
