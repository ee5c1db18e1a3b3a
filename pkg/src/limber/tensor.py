"""Dense tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape` whenever one of
their inputs requires gradients.  Outside a tape everything runs eagerly with
no bookkeeping, which is how frozen models are evaluated.

Example::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = (matmul(x, w) * 2.0).sum()
    tape.backward(loss)
    w.grad  # d loss / d w
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

_state = threading.local()

LAYERNORM_EPS = 1e-5


def default_dtype() -> type:
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype new tensors are created with (f64 test mode)."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def _tapes() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


class Tensor:
    """Row-major float array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=default_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def is_leaf(self) -> bool:
        return self._node is None

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f"{self.name}: " if self.name else ""
        return f"Tensor({label}shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by scalars")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


class _Node:
    __slots__ = ("inputs", "out", "backward", "op")

    def __init__(self, op: str, inputs: tuple, out: Tensor, backward: Callable):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended as operations execute, so the list is already in
    topological order; :meth:`backward` walks it in reverse exactly once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tapes().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tapes()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def parameters(self) -> list[Tensor]:
        """Leaf tensors requiring gradients that some recorded op consumed."""
        seen: set[int] = set()
        out = []
        for node in self.nodes:
            for t in node.inputs:
                if isinstance(t, Tensor) and t.requires_grad and t._node is None and id(t) not in seen:
                    seen.add(id(t))
                    out.append(t)
        return out

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._node is None:
            raise ValueError("loss was not produced by an operation recorded on this tape")
        if not np.isfinite(loss.data).all():
            raise FloatingPointError("loss is not finite")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                if inp._node is None:
                    gi = np.asarray(gi, dtype=inp.data.dtype)
                    if inp.grad is None:
                        inp.grad = gi.copy()
                    else:
                        inp.grad += gi
                else:
                    if gi.dtype != inp.data.dtype:
                        gi = gi.astype(inp.data.dtype)
                    key = id(inp)
                    if key in pending:
                        pending[key] = pending[key] + gi
                    else:
                        pending[key] = gi


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, inputs: tuple, backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._node = None
    out.name = None
    tracked = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    stack = _tapes()
    if tracked and stack:
        out.requires_grad = True
        node = _Node(op, inputs, out, backward)
        out._node = node
        stack[-1].record(node)
    else:
        out.requires_grad = False
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", data, (a, b), bw)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _as_tensor(a)
        s = float(b)
        return _make("mul", a.data * a.data.dtype.type(s), (a,), lambda g: (g * s,))
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make("mul", data, (a, b), bw)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU, as used by GPT-style models."""
    x = _as_tensor(x)
    v = x.data
    inner = _GELU_C * (v + 0.044715 * (v * v * v))
    t = np.tanh(inner)
    data = 0.5 * v * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + (3 * 0.044715) * (v * v))
        d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner
        return (g * d,)

    return _make("gelu", data.astype(v.dtype, copy=False), (x,), bw)


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.data)
    return _make("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    return _make("relu", x.data * pos, (x,), lambda g: (g * pos,))


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    e = np.exp(x.data)
    return _make("exp", e, (x,), lambda g: (g * e,))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make("softmax", s, (x,), bw)


def log_softmax(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", out, (x,), bw)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    data = y * gain.data + bias.data

    def bw(g):
        gy = g * gain.data
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True) - y * (gy * y).mean(axis=-1, keepdims=True))
        ggain = _unbroadcast(g * y, gain.shape) if gain.requires_grad else None
        gbias = _unbroadcast(g, bias.shape) if bias.requires_grad else None
        return gx, ggain, gbias

    return _make("layernorm", data, (x, gain, bias), bw)


def dropout_mask(shape: tuple, p: float, key: Sequence[int]) -> np.ndarray:
    """Keep-mask drawn from a counter-based stream keyed by ``key``.

    Keys are typically ``(seed, step, site)`` so any step can be replayed.
    """
    gen = np.random.Generator(np.random.Philox(key=_philox_key(key)))
    return gen.random(shape, dtype=np.float32) >= p


def _philox_key(key: Sequence[int]) -> int:
    words = [int(k) & 0xFFFFFFFFFFFFFFFF for k in key]
    ss = np.random.SeedSequence(words)
    a, b = ss.generate_state(2, dtype=np.uint64)
    return (int(a) << 64) | int(b)


def dropout(x: Tensor, p: float, key: Sequence[int] | None = None, training: bool = True) -> Tensor:
    if not (0.0 <= p < 1.0):
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = _as_tensor(x)
    if not training or p == 0.0:
        return x
    if key is None:
        raise ValueError("dropout in training mode needs an RNG key")
    keep = dropout_mask(x.shape, p, key)
    scale = x.data.dtype.type(1.0 / (1.0 - p))
    m = keep * scale
    return _make("dropout", x.data * m, (x,), lambda g: (g * m,))


# ----------------------------------------------------------------------------
# linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; ``b`` may be 2-D and shared across a batch."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make("matmul", data, (a, b), bw)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, tuple(axes))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make("concat", data, tuple(ts), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)


def getitem(x: Tensor, idx) -> Tensor:
    x = _as_tensor(x)
    data = x.data[idx]

    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make("getitem", data, (x,), bw)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def take_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: ``table[ids]`` with gradient scattered back into ``table``."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def bw(g):
        flat = ids.reshape(-1)
        rows = g.reshape(-1, table.shape[-1])
        V = table.shape[0]
        if flat.size * V <= 4_000_000:
            onehot = np.zeros((V, flat.size), dtype=rows.dtype)
            onehot[flat, np.arange(flat.size)] = 1.0
            return (onehot @ rows,)
        full = np.zeros_like(table.data)
        np.add.at(full, flat, rows)
        return (full,)

    return _make("take_rows", data, (table,), bw)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", data, (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm."""
    x = _as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True)) + eps
    y = x.data / norm

    def bw(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _make("l2_normalize", y, (x,), bw)


# ----------------------------------------------------------------------------
# losses


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean next-token negative log-likelihood over unmasked positions.

    ``logits`` has shape ``[..., V]`` and ``targets`` the leading shape.  ``mask``
    (same shape as ``targets``) selects the positions that count.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    V = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    m = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise ValueError("cross_entropy: every position is masked, loss is undefined")
    safe = np.where(m, targets, 0)
    if (safe < 0).any() or (safe >= V).any():
        raise ValueError("cross_entropy: target id out of range")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * m).sum() / count
    if not np.isfinite(loss):
        raise FloatingPointError("cross_entropy produced a non-finite loss")

    def bw(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, safe[..., None], 1.0, axis=-1)
        scale = (m * (float(g) / count)).astype(p.dtype)[..., None]
        return (((p - onehot) * scale).astype(logits.data.dtype, copy=False),)

    return _make("cross_entropy", np.asarray(loss, dtype=logits.data.dtype), (logits,), bw)


def mse(pred: Tensor, target, mask=None) -> Tensor:
    """Mean squared error; with ``mask`` the mean runs over selected elements only."""
    pred = _as_tensor(pred)
    tgt = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.data.dtype)
    diff = pred.data - tgt
    if mask is None:
        w = np.ones_like(diff)
    else:
        w = np.broadcast_to(np.asarray(mask, dtype=pred.data.dtype), diff.shape)
    count = float(w.sum())
    if count == 0:
        raise ValueError("mse: nothing selected")
    loss = (diff * diff * w).sum() / count
    return _make("mse", np.asarray(loss, dtype=pred.data.dtype), (pred,), lambda g: (2.0 * diff * w / count * g,))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits (numerically stable form)."""
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=logits.data.dtype)
    x = logits.data
    loss = (np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))).mean()
    n = x.size

    def bw(g):
        s = 1.0 / (1.0 + np.exp(-x))
        return ((s - y) / n * g,)

    return _make("bce", np.asarray(loss, dtype=x.dtype), (logits,), bw)
