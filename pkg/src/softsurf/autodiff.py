"""Minimal reverse-mode autodiff on dense numpy tensors, plus Adam.

Training runs in float32; gradient checks construct float64 tensors. The
operator set is exactly what the network and losses need: no views, no
in-place updates, no graph optimizations. A node records its parents and a
backward closure; ``backward`` releases the closures afterwards, so a graph
can be differentiated once per forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _tracked(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _make(data: np.ndarray, parents, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    tracked = tuple(p for p in parents if p._tracked())
    if tracked:
        out._parents = tracked
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor):
    """Populate ``grad`` on every reachable requires_grad tensor."""
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._backward is None and loss._parents == ():
        raise RuntimeError(
            "backward on a tensor with no recorded graph "
            "(already backpropagated, or no tracked inputs)"
        )

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(topo):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            _accumulate(node, g)
        if node._backward is not None:
            for parent, pg in node._backward(g):
                if not parent._tracked():
                    continue
                pid = id(parent)
                if pid in adjoint:
                    adjoint[pid] = adjoint[pid] + pg
                else:
                    adjoint[pid] = pg
            node._backward = None
            node._parents = ()


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _make(out_data, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ValueError(f"add shape mismatch: {a.data.shape} + {b.data.shape}")

    def bwd(g):
        return (
            (a, _unbroadcast(g, a.data.shape)),
            (b, _unbroadcast(g, b.data.shape)),
        )

    return _make(out_data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data - b.data
    except ValueError:
        raise ValueError(f"sub shape mismatch: {a.data.shape} - {b.data.shape}")

    def bwd(g):
        return (
            (a, _unbroadcast(g, a.data.shape)),
            (b, _unbroadcast(-g, b.data.shape)),
        )

    return _make(out_data, (a, b), bwd)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(g):
        return ((x, g * s),)

    return _make(x.data * s, (x,), bwd)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, parts))

    return _make(out_data, tuple(tensors), bwd)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0)

    def bwd(g):
        return ((x, g * (x.data > 0)),)

    return _make(out_data, (x,), bwd)


def square(x: Tensor) -> Tensor:
    def bwd(g):
        return ((x, g * (2.0 * x.data)),)

    return _make(x.data * x.data, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    def bwd(g):
        return ((x, g.reshape(x.data.shape)),)

    return _make(x.data.reshape(shape), (x,), bwd)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    out_data = x.data[idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return ((x, gx),)

    return _make(out_data, (x,), bwd)


def edge_features(x: Tensor, targets: np.ndarray, sources: np.ndarray) -> Tensor:
    """Per-edge feature rows ``[x_target, x_source - x_target]`` in one node."""
    targets = np.asarray(targets, dtype=np.int64)
    sources = np.asarray(sources, dtype=np.int64)
    xi = x.data[targets]
    out_data = np.concatenate([xi, x.data[sources] - xi], axis=1)
    d = x.data.shape[1]

    def bwd(g):
        g_center, g_diff = g[:, :d], g[:, d:]
        gx = np.zeros_like(x.data)
        np.add.at(gx, targets, g_center - g_diff)
        np.add.at(gx, sources, g_diff)
        return ((x, gx),)

    return _make(out_data, (x,), bwd)


def scatter_mean(values: Tensor, index: np.ndarray, num_targets: int) -> Tensor:
    """Mean of value rows per target index; empty targets produce zero rows."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1 or len(index) != values.data.shape[0]:
        raise ValueError(
            f"index shape {index.shape} does not match values rows {values.data.shape}"
        )
    n_rows = len(index)
    uniform = n_rows % num_targets == 0
    if uniform:
        c = n_rows // num_targets
        uniform = bool(
            np.array_equal(index, np.repeat(np.arange(num_targets, dtype=np.int64), c))
        )
    if uniform:
        c = n_rows // num_targets
        out_data = values.data.reshape(num_targets, c, -1).mean(axis=1)

        def bwd(g):
            gv = np.repeat(g * (1.0 / c), c, axis=0)
            return ((values, gv.reshape(values.data.shape)),)

    else:
        counts = np.bincount(index, minlength=num_targets).astype(values.data.dtype)
        sums = np.zeros((num_targets,) + values.data.shape[1:], dtype=values.data.dtype)
        np.add.at(sums, index, values.data)
        denom = np.where(counts == 0, 1.0, counts).astype(values.data.dtype)
        out_data = sums / denom[:, None]

        def bwd(g):
            gv = (g / denom[:, None])[index]
            return ((values, gv),)

    return _make(out_data, (values,), bwd)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    out_data = x.data.mean(axis=axis)
    count = x.data.size if axis is None else x.data.shape[axis]

    def bwd(g):
        if axis is None:
            gx = np.broadcast_to(g / count, x.data.shape)
        else:
            gx = np.broadcast_to(np.expand_dims(g / count, axis), x.data.shape)
        return ((x, np.ascontiguousarray(gx)),)

    return _make(out_data, (x,), bwd)


def reduce_max(x: Tensor, axis: int) -> Tensor:
    out_data = x.data.max(axis=axis)
    # Subgradient: route to the first maximiser along the axis.
    arg = np.argmax(x.data, axis=axis)

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(
            gx, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis
        )
        return ((x, gx),)

    return _make(out_data, (x,), bwd)


def sqrt_sum_rows(x: Tensor) -> Tensor:
    """Row-wise L2 norm of an (N, D) tensor, with subgradient 0 at zero rows."""
    if x.data.ndim != 2:
        raise ValueError(f"sqrt_sum_rows expects a 2-D tensor, got {x.data.shape}")
    out_data = np.sqrt(np.einsum("ij,ij->i", x.data, x.data))

    def bwd(g):
        safe = np.where(out_data == 0.0, 1.0, out_data)
        gx = (g / safe)[:, None] * x.data
        gx[out_data == 0.0] = 0.0
        return ((x, gx),)

    return _make(out_data, (x,), bwd)


def zero_grads(params: dict[str, Tensor]):
    for p in params.values():
        p.grad = None


@dataclass
class AdamState:
    """First/second moment accumulators and step counter for Adam."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict[str, Tensor], lr: float = 1e-4) -> AdamState:
    state = AdamState(lr=lr)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict[str, Tensor], state: AdamState):
    """One Adam update with bias correction; gradients are left in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    step_size = state.lr / correction1
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / correction2) + state.eps
        p.data -= step_size * (m / denom)
