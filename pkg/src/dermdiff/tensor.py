"""Dense tensors with tape-based reverse-mode autodiff.

Just enough array math for the denoiser, the toy classifier, and AdamW:
explicit ops, explicit shapes, no implicit broadcasting beyond channel
bias / affine parameters.  Model math is float32; float64 tensors are
supported so test oracles can run the same graph at higher precision.

Gradients are recorded on an explicit :class:`Tape`.  Ops executed outside
any tape (the common case during sampling) record nothing and mark their
outputs as not requiring grad, so inference pays no graph overhead.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate an op's precondition."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf; surfaced instead of propagated."""


class TapeError(RuntimeError):
    """Invalid tape use (backward twice, no active tape, non-scalar loss)."""


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """A dense float array plus optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.ascontiguousarray(data, dtype=dtype)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Ordered record of differentiable ops; replayed in reverse by backward.

    Single-use: a second backward on the same tape raises unless reset().
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.used = False

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeError("a tape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def reset(self) -> None:
        self.nodes.clear()
        self.used = False

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every requires_grad leaf reachable from loss."""
        if self.used:
            raise TapeError("tape already consumed by backward; call reset() first")
        if loss.data.ndim != 0:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if not any(node.out is loss for node in self.nodes):
            raise TapeError("loss was not produced on this tape")
        self.used = True
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for node in reversed(self.nodes):
            gout = node.out.grad
            if gout is None:
                continue
            grads = node.backward_fn(gout)
            for t, g in zip(node.inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                t.grad = g if t.grad is None else t.grad + g
        # free intermediates: leaves keep their grads
        for node in self.nodes:
            if not node.out.is_leaf:
                node.out.grad = None
        self.nodes.clear()


class no_grad:
    """Temporarily suspend recording on the active tape."""

    def __enter__(self):
        global _ACTIVE_TAPE
        self._saved = _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._saved


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Run reverse-mode accumulation for a scalar loss on its tape."""
    t = tape if tape is not None else _ACTIVE_TAPE
    if t is None:
        raise TapeError("no active tape")
    t.backward(loss)


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op result; register the node if a tape is listening."""
    _check_finite(out_data, op)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.is_leaf = False
    tape = _ACTIVE_TAPE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, inputs, backward_fn))
    else:
        out.requires_grad = False
        out.is_leaf = True
    return out


def _same_dtype(*ts: Tensor) -> None:
    if len({t.data.dtype for t in ts}) > 1:
        raise ShapeError(f"mixed dtypes: {[t.data.dtype.name for t in ts]}")


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} vs {b.shape}")
    _same_dtype(a, b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} vs {b.shape}")
    _same_dtype(a, b)
    return _record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _record(a.data * a.data.dtype.type(s), (a,), lambda g: (g * s,), "scale")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[N,C] + b[C] or x[N,C,H,W] + b[C], broadcast over batch/space."""
    if b.data.ndim != 1 or x.data.ndim not in (2, 4) or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: x {x.shape} vs b {b.shape}")
    _same_dtype(x, b)
    if x.data.ndim == 2:
        out = x.data + b.data
        return _record(out, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")
    out = x.data + b.data[None, :, None, None]
    return _record(out, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))), "add_bias")


def add_spatial(x: Tensor, v: Tensor) -> Tensor:
    """x[N,C,H,W] + v[N,C], broadcast over the spatial extents."""
    if x.data.ndim != 4 or v.data.ndim != 2 or x.shape[:2] != v.shape:
        raise ShapeError(f"add_spatial: x {x.shape} vs v {v.shape}")
    _same_dtype(x, v)
    out = x.data + v.data[:, :, None, None]
    return _record(out, (x, v), lambda g: (g, g.sum(axis=(2, 3))), "add_spatial")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    return _record(
        np.ascontiguousarray(x.data.reshape(shape)),
        (x,),
        lambda g: (g.reshape(old),),
        "reshape",
    )


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: need 2-D tensor, got {x.shape}")
    return _record(np.ascontiguousarray(x.data.T), (x,), lambda g: (g.T,), "transpose")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: {a.shape} vs {b.shape}")
    _same_dtype(a, b)
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _record(out, (a, b), lambda g: (g[:, :ca], g[:, ca:]), "concat_channels")


def silu(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * sig

    def bwd(g):
        return (g * sig * (1.0 + x.data * (1.0 - sig)),)

    return _record(out, (x,), bwd, "silu")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(x.data * mask, (x,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} x {b.shape}")
    _same_dtype(a, b)
    out = a.data @ b.data

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return _record(out, (a, b), bwd, "matmul")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int | None = None) -> Tensor:
    """Cross-correlation of x[N,C,H,W] with w[F,C,k,k], zero padding."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: x {x.shape}, w {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch, x has {x.shape[1]}, w expects {w.shape[1]}")
    k = w.shape[2]
    if w.shape[3] != k or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be odd square, got {w.shape[2:]}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    _same_dtype(x, w)
    if pad is None:
        pad = k // 2
    h, wd = x.shape[2], x.shape[3]
    out = kernels.conv2d_fwd(x.data, w.data, stride, pad)

    def bwd(g):
        g = np.ascontiguousarray(g)
        return (
            kernels.conv2d_bwd_x(w.data, g, h, wd, stride, pad),
            kernels.conv2d_bwd_w(x.data, g, k, stride, pad),
        )

    return _record(out, (x, w), bwd, "conv2d")


# ---------------------------------------------------------------------------
# normalization, pooling, resampling


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each channel group of x[N,C,H,W] to zero mean / unit variance, then affine."""
    if x.data.ndim != 4:
        raise ShapeError(f"group_norm: need N,C,H,W input, got {x.shape}")
    n, c, h, w = x.shape
    if c % groups != 0:
        raise ShapeError(f"group_norm: groups {groups} must divide channels {c}")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("group_norm: gamma/beta must be per-channel vectors")
    _same_dtype(x, gamma, beta)
    xg = x.data.reshape(n, groups, c // groups, h, w)
    mean = xg.mean(axis=(2, 3, 4), keepdims=True)
    var = xg.var(axis=(2, 3, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = ((xg - mean) * inv).reshape(n, c, h, w)
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
    m = (c // groups) * h * w

    def bwd(g):
        dxhat = (g * gamma.data[None, :, None, None]).reshape(n, groups, c // groups, h, w)
        xh = xhat.reshape(n, groups, c // groups, h, w)
        s1 = dxhat.sum(axis=(2, 3, 4), keepdims=True)
        s2 = (dxhat * xh).sum(axis=(2, 3, 4), keepdims=True)
        dx = inv / m * (m * dxhat - s1 - xh * s2)
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        return (dx.reshape(n, c, h, w), dgamma, dbeta)

    return _record(out, (x, gamma, beta), bwd, "group_norm")


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    if x.data.ndim != 4 or x.shape[2] % k or x.shape[3] % k:
        raise ShapeError(f"avg_pool2d: spatial extents of {x.shape} not divisible by {k}")
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def bwd(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (gx.astype(x.data.dtype, copy=False),)

    return _record(out, (x,), bwd, "avg_pool2d")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest: need N,C,H,W input, got {x.shape}")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bwd(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _record(out, (x,), bwd, "upsample_nearest")


# ---------------------------------------------------------------------------
# losses


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements; scalar output."""
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} vs {b.shape}")
    _same_dtype(a, b)
    diff = a.data - b.data
    numel = diff.size
    out = np.asarray((diff * diff).mean(), dtype=a.data.dtype)

    def bwd(g):
        d = (2.0 / numel) * g * diff
        return (d.astype(a.data.dtype, copy=False), (-d).astype(a.data.dtype, copy=False))

    return _record(out, (a, b), bwd, "mse")


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Softmax cross-entropy of logits[N,K] against integer labels[N]."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: need N,K logits, got {logits.shape}")
    labels = np.asarray(labels)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} vs batch {n}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    out = np.asarray(-np.mean(np.log(p[np.arange(n), labels] + 1e-12)), dtype=logits.data.dtype)

    def bwd(g):
        d = p.copy()
        d[np.arange(n), labels] -= 1.0
        return ((g * d / n).astype(logits.data.dtype, copy=False),)

    return _record(out, (logits,), bwd, "cross_entropy")


def embedding_mean(table: Tensor, id_lists: Sequence[Sequence[int]]) -> Tensor:
    """Mean of embedding rows per id list; empty lists map to row 0."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding_mean: table must be 2-D, got {table.shape}")
    rows = []
    resolved: list[list[int]] = []
    for ids in id_lists:
        ids = list(ids) if len(ids) else [0]
        resolved.append(ids)
        rows.append(table.data[ids].mean(axis=0))
    out = np.stack(rows).astype(table.data.dtype)

    def bwd(g):
        gt = np.zeros_like(table.data)
        for i, ids in enumerate(resolved):
            gt[ids] += g[i] / len(ids)
        return (gt,)

    return _record(out, (table,), bwd, "embedding_mean")
