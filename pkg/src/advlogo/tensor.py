"""Minimal dense tensors with reverse-mode differentiation on a linear tape.

Every primitive takes an optional ``tape``. When given, the op appends a
node holding its output, its inputs and a vector-Jacobian product closure;
``Tape.backward`` replays the nodes in reverse recording order. Without a
tape the op is a plain forward computation.

The detector and the training losses are composed from these primitives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, DomainError, NumericError

DTYPE = np.float64


class Tensor:
    """Immutable row-major array of finite floats."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=DTYPE)
        if not np.isfinite(arr).all():
            raise NumericError("tensor contains NaN or Inf")
        arr.flags.writeable = False
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def _wrap(arr) -> Tensor:
    # Fast path: ops produce fresh arrays, skip the defensive copy.
    t = Tensor.__new__(Tensor)
    arr = np.asarray(arr, dtype=DTYPE)
    if not np.isfinite(arr).all():
        raise NumericError("op produced NaN or Inf")
    arr.flags.writeable = False
    t.data = arr
    return t


@dataclass
class DualSlot:
    """A value paired with its accumulated adjoint."""

    value: Tensor
    grad: np.ndarray = None

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros(self.value.shape, dtype=DTYPE)
        elif self.grad.shape != self.value.shape:
            raise DimensionError("grad shape must equal value shape")

    def accumulate(self, g):
        self.grad += g


VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    vjp: VJP


@dataclass
class Tape:
    """Linear record of differentiable ops; single owner, not thread-safe."""

    nodes: list = field(default_factory=list)

    def record(self, out: Tensor, inputs, vjp: VJP) -> Tensor:
        self.nodes.append(_Node(out, tuple(inputs), vjp))
        return out

    def __len__(self):
        return len(self.nodes)

    def backward(self, output: Tensor, seed=None) -> "Gradients":
        """Propagate ``seed`` (default ones) from ``output`` to every recorded input."""
        slots: dict[int, DualSlot] = {}
        if seed is None:
            seed = np.ones(output.shape, dtype=DTYPE)
        seed = np.asarray(seed, dtype=DTYPE)
        if seed.shape != output.shape:
            raise DimensionError(f"seed shape {seed.shape} != output shape {output.shape}")
        slots[id(output)] = DualSlot(output, seed.copy())
        for node in reversed(self.nodes):
            slot = slots.get(id(node.out))
            if slot is None:
                continue
            in_grads = node.vjp(slot.grad)
            for t, g in zip(node.inputs, in_grads):
                if g is None or not isinstance(t, Tensor):
                    continue
                s = slots.get(id(t))
                if s is None:
                    slots[id(t)] = DualSlot(t, np.array(g, dtype=DTYPE).reshape(t.shape))
                else:
                    s.accumulate(g)
        return Gradients(slots)


class Gradients:
    def __init__(self, slots):
        self._slots = slots

    def __getitem__(self, t: Tensor) -> np.ndarray:
        slot = self._slots.get(id(t))
        if slot is None or slot.value is not t:
            return np.zeros(t.shape, dtype=DTYPE)
        return slot.grad

    def __contains__(self, t):
        slot = self._slots.get(id(t))
        return slot is not None and slot.value is t


def _emit(tape, out_arr, inputs, vjp):
    out = _wrap(out_arr)
    if tape is not None:
        tape.record(out, inputs, vjp)
    return out


def _same_shape(a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- convolution


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           pad: int = 0, tape: Optional[Tape] = None) -> Tensor:
    """Cross-correlation of ``x`` ([C,H,W] or [N,C,H,W]) with ``kernel`` [K,C,kh,kw].

    Output spatial size is ``(H + 2*pad - kh) // stride + 1``.
    """
    if stride < 1 or pad < 0:
        raise DomainError("stride must be >= 1 and pad >= 0")
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError("conv2d expects [C,H,W] or [N,C,H,W] input and [K,C,kh,kw] kernel")
    n, c, h, w = xd.shape
    k, kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"kernel has {kc} input channels, input has {c}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError("kernel larger than padded input")
    if bias is not None and bias.shape != (k,):
        raise DimensionError(f"bias must have shape ({k},)")
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = kernel.data.reshape(k, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, k).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    if single:
        out = out[0]

    def vjp(g):
        g4 = g[None] if single else g
        g2 = g4.transpose(0, 2, 3, 1).reshape(-1, k)
        dk = (g2.T @ cols).reshape(kernel.shape)
        dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad:pad + h, pad:pad + w]
        if single:
            dx = dx[0]
        db = g4.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, dk, db

    return _emit(tape, out, (x, kernel, bias), vjp)


# ---------------------------------------------------------------- elementwise


def leaky_relu(x: Tensor, slope: float, tape: Optional[Tape] = None) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise DomainError("slope must lie in [0, 1)")
    d = x.data
    out = np.maximum(d, slope * d)
    return _emit(tape, out, (x,), lambda g: (np.where(d > 0, g, slope * g),))


def sigmoid(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    d = x.data
    # split on sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(tape, out, (x,), lambda g: (g * out * (1.0 - out),))


def affine(x: Tensor, scale: float, shift: float, tape: Optional[Tape] = None) -> Tensor:
    return _emit(tape, scale * x.data + shift, (x,), lambda g: (scale * g,))


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _same_shape(a, b)
    return _emit(tape, a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _same_shape(a, b)
    return _emit(tape, a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _same_shape(a, b)
    ad, bd = a.data, b.data
    return _emit(tape, ad * bd, (a, b), lambda g: (g * bd, g * ad))


def clamp01(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Clip to [0, 1]; gradient flows only where the input is strictly inside."""
    d = x.data
    inside = (d > 0.0) & (d < 1.0)
    return _emit(tape, np.clip(d, 0.0, 1.0), (x,), lambda g: (np.where(inside, g, 0.0),))


# ---------------------------------------------------------------- reductions


def reduce_max(x: Tensor, tape: Optional[Tape] = None) -> tuple[Tensor, int]:
    """Maximum element and its flat index; ties go to the first index."""
    if x.size == 0:
        raise DomainError("reduce_max of an empty tensor")
    flat = x.data.ravel()
    idx = int(np.argmax(flat))
    shape = x.shape

    def vjp(g):
        dx = np.zeros(flat.shape, dtype=DTYPE)
        dx[idx] = g
        return (dx.reshape(shape),)

    return _emit(tape, flat[idx], (x,), vjp), idx


def reduce_sum(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    shape = x.shape
    return _emit(tape, x.data.sum(), (x,), lambda g: (np.full(shape, g, dtype=DTYPE),))


def gather(x: Tensor, flat_indices, tape: Optional[Tape] = None) -> Tensor:
    """Select elements of ``x`` by flat index; repeated indices accumulate on backward."""
    idx = np.asarray(flat_indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= x.size):
        raise DimensionError("gather index out of range")
    shape = x.shape

    def vjp(g):
        dx = np.zeros(x.size, dtype=DTYPE)
        np.add.at(dx, idx, g)
        return (dx.reshape(shape),)

    return _emit(tape, x.data.ravel()[idx], (x,), vjp)


def stack_scalars(items: Sequence[Tensor], tape: Optional[Tape] = None) -> Tensor:
    for t in items:
        if t.shape != ():
            raise DimensionError("stack_scalars expects 0-d tensors")
    vals = np.array([t.data for t in items], dtype=DTYPE)
    return _emit(tape, vals, tuple(items), lambda g: tuple(g[i] for i in range(len(items))))


def bce_with_logits(logits: Tensor, targets, tape: Optional[Tape] = None) -> Tensor:
    """Summed binary cross-entropy between sigmoid(logits) and constant targets."""
    y = np.asarray(targets, dtype=DTYPE)
    if y.shape != logits.shape:
        raise DimensionError("targets must match logits shape")
    z = logits.data
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    e = np.exp(-np.abs(z))
    p = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _emit(tape, loss.sum(), (logits,), lambda g: (g * (p - y),))
