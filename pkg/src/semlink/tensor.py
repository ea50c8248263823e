"""Dense float64 tensors with reverse-mode automatic differentiation.

Operations record onto an explicit Tape (a context manager). Recording order
is execution order, which is already a valid topological order, so backward()
is a single reverse sweep. Outside any tape, operations compute values only;
this is the evaluation fast path.

Broadcasting policy: no broadcasting beyond what is explicit. Elementwise ops
accept equal shapes or one operand whose shape is a trailing suffix of the
other (bias/gain vectors); per-sample scalars go through bscale, which aligns
on leading axes. Everything else must match exactly.

Hard one-hot samples and binary masks are constants on the tape; gradients
flow through soft paths only (see straight_through).
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_UIDS = itertools.count()
_TAPE_STACK: list["Tape"] = []

# gelu tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Tape:
    """Ordered record of operations; every node's parents precede it."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        popped = _TAPE_STACK.pop()
        assert popped is self
        # Dismantle the graph eagerly. Tensors point at the tape and the tape's
        # nodes point back at tensors and at backward closures holding forward
        # intermediates; left to the cycle collector, a training step's worth
        # of arrays outlives the step and the process balloons. backward() is
        # only supported inside the block, so nothing is lost here.
        for node in self.nodes:
            node.out.tape = None
            node.out.node_id = None
            node.out = node.parents = node.bw = None
        self.nodes.clear()
        return False


class _Node:
    __slots__ = ("out", "parents", "bw")

    def __init__(self, out: "Tensor", parents: tuple["Tensor", ...], bw: Callable) -> None:
        self.out = out
        self.parents = parents
        self.bw = bw


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "tape", "uid")

    def __init__(self, data, requires_grad: bool = False) -> None:
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self.tape: Tape | None = None
        self.uid = next(_UIDS)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _raise_scalar(t: Tensor):
    raise ContractError(f"expected a scalar tensor, got shape {t.data.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _record(out_data: np.ndarray, parents: tuple[Tensor, ...], bw: Callable) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.tape = tape
        out.node_id = len(tape.nodes)
        tape.nodes.append(_Node(out, parents, bw))
    return out


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dt into t.grad for every requires_grad tensor reachable
    from loss. Repeated calls without zero_grad accumulate."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss.tape is None:
        if loss.requires_grad:
            raise ContractError("loss is not on a tape")
        return
    tape = loss.tape
    cot: dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {loss.uid: loss}
    for node in reversed(tape.nodes):
        g = cot.get(node.out.uid)
        if g is None:
            continue
        grads = node.bw(g)
        for parent, pg in zip(node.parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.uid in cot:
                cot[parent.uid] = cot[parent.uid] + pg
            else:
                cot[parent.uid] = pg
                holders[parent.uid] = parent
    for uid, t in holders.items():
        if not t.requires_grad:
            continue
        g = cot[uid]
        t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------- shape rules


def _check_suffix(sa: tuple[int, ...], sb: tuple[int, ...], op: str) -> None:
    if sa == sb:
        return
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return
    raise DimensionError(f"{op}: shapes {sa} and {sb} are neither equal nor suffix-aligned")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ------------------------------------------------------------- elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix(a.data.shape, b.data.shape, "add")
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix(a.data.shape, b.data.shape, "sub")
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product (suffix-aligned shapes allowed)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix(a.data.shape, b.data.shape, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record(out, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        return (g * c,)

    return _record(a.data * c, (a,), bw)


def bscale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply x by s aligned on leading axes: x.shape[:s.ndim] == s.shape.

    Covers per-sample scalars, e.g. x:(B,l,d) * s:(B,)."""
    x, s = as_tensor(x), as_tensor(s)
    if x.data.shape[: s.data.ndim] != s.data.shape:
        raise DimensionError(
            f"bscale: leading axes of {x.data.shape} do not match {s.data.shape}")
    s_r = s.data.reshape(s.data.shape + (1,) * (x.data.ndim - s.data.ndim))
    out = x.data * s_r
    xd = x.data
    trailing = tuple(range(s.data.ndim, x.data.ndim))

    def bw(g):
        gs = (g * xd).sum(axis=trailing) if trailing else g * xd
        return g * s_r, gs

    return _record(out, (x, s), bw)


def recip(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / x.data
    xd = x.data

    def bw(g):
        return (-g / (xd * xd),)

    return _record(out, (x,), bw)


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def bw(g):
        return (g / (2.0 * out),)

    return _record(out, (x,), bw)


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)
    xd = x.data

    def bw(g):
        return (g / xd,)

    return _record(out, (x,), bw)


def clip_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor) elementwise; subgradient 0 at the kink."""
    x = as_tensor(x)
    floor = float(floor)
    out = np.maximum(x.data, floor)
    pass_mask = x.data > floor

    def bw(g):
        return (g * pass_mask,)

    return _record(out, (x,), bw)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation gelu: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    x = as_tensor(x)
    xd = x.data
    x2 = xd * xd
    inner = _GELU_C * (xd + _GELU_A * (x2 * xd))
    th = np.tanh(inner)
    out = 0.5 * xd * (1.0 + th)

    def bw(g):
        sech2 = 1.0 - th * th
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * sech2 * d_inner),)

    return _record(out, (x,), bw)


# ------------------------------------------------------------ structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul: operands must be >= 2-D, got {sa} and {sb}")
    if sa[-1] != sb[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {sa} @ {sb}")
    if a.data.ndim > 2 and b.data.ndim > 2 and sa[:-2] != sb[:-2]:
        raise DimensionError(f"matmul: leading (batch) axes differ, {sa} @ {sb}")
    out = np.matmul(a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        while ga.ndim > ad.ndim:
            ga = ga.sum(axis=0)
        if bd.ndim == 2 and ad.ndim > 2:
            # stacked x (k,n): fold the batch into one GEMM instead of
            # summing a stack of per-slice products
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
            while gb.ndim > bd.ndim:
                gb = gb.sum(axis=0)
        return ga, gb

    return _record(out, (a, b), bw)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise DimensionError(f"permute: axes {axes} invalid for shape {x.data.shape}")
    inv = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return _record(out, (x,), bw)


def swap_last2(x: Tensor) -> Tensor:
    axes = list(range(x.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    old = x.data.shape
    out = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(old),)

    return _record(out, (x,), bw)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise DimensionError("concat: empty input list")
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.data.shape[axis] for x in xs]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(out, tuple(xs), bw)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = x.data[idx]
    shape = x.data.shape

    def bw(g):
        full = np.zeros(shape, dtype=np.float64)
        full[idx] = g
        return (full,)

    return _record(out, (x,), bw)


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Tile a size-1 axis to size n (explicit broadcast)."""
    x = as_tensor(x)
    if x.data.shape[axis] != 1:
        raise DimensionError(f"expand: axis {axis} of {x.data.shape} is not 1")
    out = np.repeat(x.data, n, axis=axis)

    def bw(g):
        return (g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), bw)


def _norm_axes(axes: Sequence[int], nd: int, op: str) -> tuple[int, ...]:
    out = []
    for a in axes:
        if not -nd <= a < nd:
            raise IndexError(f"{op}: axis {a} out of range for ndim {nd}")
        out.append(a % nd)
    return tuple(out)


def sum_axes(x: Tensor, axes: Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    nd = x.data.ndim
    ax = tuple(range(nd)) if axes is None else _norm_axes(axes, nd, "sum_axes")
    out = x.data.sum(axis=ax, keepdims=keepdims)
    shape = x.data.shape

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, ax)
        # read-only broadcast view; accumulation and the leaf-grad copy in
        # backward() never mutate cotangents in place
        return (np.broadcast_to(gk, shape),)

    return _record(out, (x,), bw)


def mean_axes(x: Tensor, axes: Sequence[int] | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    nd = x.data.ndim
    ax = tuple(range(nd)) if axes is None else _norm_axes(axes, nd, "mean_axes")
    n = 1
    for a in ax:
        n *= x.data.shape[a]
    return scale(sum_axes(x, ax, keepdims), 1.0 / n)


def mean_pool(x: Tensor, axis: int) -> Tensor:
    """Arithmetic mean over one axis; backward spreads gradient uniformly."""
    return mean_axes(x, (axis,), keepdims=False)


# --------------------------------------------------------------- fused NN ops


def softmax_lastaxis(x: Tensor) -> Tensor:
    """Row-stochastic softmax over the last axis, stabilized by max-subtraction."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - dot) * out,)

    return _record(out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1]
    if d == 0:
        raise DimensionError("layer_norm: last axis has size 0")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.data.shape} / bias {bias.data.shape} do not match d={d}")
    if eps <= 0:
        raise ContractError("layer_norm: eps must be > 0")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    gd = gain.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        d_gain = (g * xhat).sum(axis=lead)
        d_bias = g.sum(axis=lead)
        dxhat = g * gd
        dx = (inv / d) * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, d_gain, d_bias

    return _record(out, (x, gain, bias), bw)


# ----------------------------------------------------- gradient-routing ops


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data.copy(), requires_grad=False)


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value is exactly `hard`; gradient passes to `soft` unchanged.

    Implemented as a dedicated tape op rather than hard + (soft - soft) so the
    forward value is bit-equal to the hard sample."""
    soft = as_tensor(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.data.shape:
        raise DimensionError(
            f"straight_through: hard {hard.shape} vs soft {soft.data.shape}")

    def bw(g):
        return (g,)

    return _record(hard.copy(), (soft,), bw)
