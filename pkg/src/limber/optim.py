"""AdamW with decoupled weight decay, and global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

DEFAULT_LR = 8e-4
DEFAULT_BETAS = (0.9, 0.95)
DEFAULT_EPS = 1e-8
DEFAULT_CLIP = 1.0


@dataclass
class ParamGroup:
    params: list[Tensor]
    lr: float
    weight_decay: float = 0.0


@dataclass
class AdamW:
    """Bias-corrected Adam with decoupled weight decay.

    Parameters can be split into groups with their own learning rate, e.g. a
    projection at 8e-4 and a tuned encoder at 2e-6.
    """

    groups: list[ParamGroup]
    betas: tuple[float, float] = DEFAULT_BETAS
    eps: float = DEFAULT_EPS
    step_count: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params, lr=DEFAULT_LR, betas=DEFAULT_BETAS, weight_decay=0.0, eps=DEFAULT_EPS) -> "AdamW":
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        return cls(groups=[ParamGroup(list(params), lr, weight_decay)], betas=tuple(betas), eps=eps)

    def parameters(self) -> list[Tensor]:
        return [p for g in self.groups for p in g.params]

    def _index(self) -> dict[int, int]:
        return {id(p): i for i, p in enumerate(self.parameters())}

    def step(self) -> None:
        params = self.parameters()
        for i, p in enumerate(params):
            if p.grad is None:
                name = p.name or f"#{i}"
                raise RuntimeError(f"parameter {name} has no gradient; run backward before stepping")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        i = 0
        for group in self.groups:
            for p in group.params:
                g = p.grad
                m = self.m.get(i)
                if m is None:
                    m = np.zeros_like(p.data)
                    v = np.zeros_like(p.data)
                else:
                    v = self.v[i]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * (g * g)
                self.m[i], self.v[i] = m, v
                if group.weight_decay:
                    p.data -= p.data.dtype.type(group.lr * group.weight_decay) * p.data
                update = (m / c1) / (np.sqrt(v / c2) + self.eps)
                p.data -= (group.lr * update).astype(p.data.dtype, copy=False)
                p.grad = None
                i += 1

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Moment buffers keyed for checkpointing (``adam.m.<i>`` / ``adam.v.<i>``)."""
        out = {}
        for i, p in enumerate(self.parameters()):
            if i in self.m:
                out[f"adam.m.{i}"] = self.m[i]
                out[f"adam.v.{i}"] = self.v[i]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], step_count: int) -> None:
        params = self.parameters()
        self.m, self.v = {}, {}
        for i, p in enumerate(params):
            key = f"adam.m.{i}"
            if key in tensors:
                self.m[i] = np.array(tensors[key], dtype=p.data.dtype).reshape(p.shape)
                self.v[i] = np.array(tensors[f"adam.v.{i}"], dtype=p.data.dtype).reshape(p.shape)
        self.step_count = int(step_count)


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_global_norm(params, max_norm: float = DEFAULT_CLIP) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the scale that was applied (1.0 when the norm was already small).
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    params = list(params)
    for p in params:
        if p.grad is None:
            raise RuntimeError("clip_global_norm called before gradients were computed")
    norm = global_grad_norm(params)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for p in params:
        p.grad *= p.grad.dtype.type(scale)
    return scale
