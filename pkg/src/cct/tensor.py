"""Minimal reverse-mode autograd over numpy arrays.

Every op records its parents and a backward closure on the output tensor.
``Tensor.backward`` walks the recorded graph in reverse creation order, so
each op's backward rule runs exactly once and fan-out gradients accumulate.

Storage is float32 by default. ``float64_mode()`` switches newly created
tensors to float64 so finite-difference checks have enough headroom.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "float64_mode",
    "no_grad",
    "get_dtype",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "reshape",
    "transpose",
    "sum",
    "mean",
    "relu",
    "gelu",
    "softmax",
    "layer_norm",
    "conv2d",
    "maxpool2d",
    "masked_scale",
    "same_padding",
    "grad_check",
    "GradCheckReport",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


_dtype = np.float32
_grad_enabled = True
_counter = itertools.count()


def get_dtype():
    return _dtype


@contextlib.contextmanager
def float64_mode():
    """Create tensors in float64 inside the block (gradient checks only)."""
    global _dtype
    prev = _dtype
    _dtype = np.float64
    try:
        yield
    finally:
        _dtype = prev


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _dtype)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_counter)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topo_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in reverse creation order."""
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(p for p in node._parents if p.requires_grad)
    nodes.sort(key=lambda n: n._seq, reverse=True)
    return nodes


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_counter)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# elementwise


def _is_scalar(b) -> bool:
    return not isinstance(b, Tensor) or b.data.ndim == 0


def _check_bias_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or b.ndim == 0:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g.sum().reshape(shape)


def _elementwise(a, b, kind: str) -> Tensor:
    a = _as_tensor(a)
    if _is_scalar(b) and not isinstance(b, Tensor):
        c = float(b)
        if kind == "add":
            return _make(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add")
        if kind == "sub":
            return _make(a.data - a.data.dtype.type(c), (a,), lambda g: (g,), "sub")
        return scale(a, c)
    b = _as_tensor(b)
    _check_bias_shape(a, b, kind)
    ad, bd = a.data, b.data
    if kind == "add":
        out = ad + bd
        bw = lambda g: (g, _reduce_to(g, bd.shape))
    elif kind == "sub":
        out = ad - bd
        bw = lambda g: (g, -_reduce_to(g, bd.shape))
    elif kind == "mul":
        out = ad * bd
        bw = lambda g: (g * bd, _reduce_to(g * ad, bd.shape))
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return _make(out, (a, b), bw, kind)


def add(a, b) -> Tensor:
    return _elementwise(a, b, "add")


def sub(a, b) -> Tensor:
    return _elementwise(a, b, "sub")


def mul(a, b) -> Tensor:
    return _elementwise(a, b, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def masked_scale(x: Tensor, mask: np.ndarray) -> Tensor:
    """Multiply by a constant array broadcastable to ``x`` (dropout masks)."""
    mask = np.asarray(mask, dtype=x.data.dtype)
    try:
        out = x.data * mask
    except ValueError as exc:
        raise ShapeError(f"masked_scale: shape mismatch {x.shape} vs {mask.shape}") from exc
    if out.shape != x.shape:
        raise ShapeError(f"masked_scale: mask {mask.shape} would broadcast {x.shape} to {out.shape}")
    return _make(out, (x,), lambda g: (g * mask,), "masked_scale")


# ---------------------------------------------------------------------------
# shape ops and reductions


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),), "transpose")


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    src = x.shape
    out = x.data.sum(axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    total = sum(x, axis)
    return scale(total, total.data.size / x.data.size)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with optional leading batch axes.

    ``a`` may carry batch axes while ``b`` is a plain 2-D weight; the weight
    gradient is then summed over the batch.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch axes differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# activations and normalisation


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _make(x.data * pos, (x,), lambda g: (g * pos,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    xd = x.data
    c = xd.dtype.type(_GELU_C)
    k = xd.dtype.type(0.044715)
    x2 = xd * xd
    inner = c * (xd + k * x2 * xd)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        dinner = c * (1.0 + 3.0 * k * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _make(out, (x,), bw, "gelu")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), bw, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis then apply ``gamma * xhat + beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last axis {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        gx = g * gamma.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), bw, "layer_norm")


# ---------------------------------------------------------------------------
# convolution and pooling (NHWC)


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """(before, after) padding giving ``ceil(size / stride)`` outputs."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _pads(h: int, w: int, kh: int, kw: int, stride: int, padding: str):
    if padding == "same":
        return same_padding(h, kh, stride), same_padding(w, kw, stride)
    if padding == "valid":
        return (0, 0), (0, 0)
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: str = "same") -> Tensor:
    """Cross-correlation of ``x[B,H,W,C]`` with ``w[kh,kw,C,F]`` plus bias."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects x[B,H,W,C] and w[kh,kw,C,F], got {x.shape} and {w.shape}")
    B, H, W, C = x.shape
    kh, kw, wc, F = w.shape
    if wc != C:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    if b is not None and b.shape != (F,):
        raise ShapeError(f"conv2d bias {b.shape} does not match {F} filters")
    (pt, pb), (pl, pr) = _pads(H, W, kh, kw, stride, padding)
    Hp, Wp = H + pt + pb, W + pl + pr
    if kh > Hp or kw > Wp:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x.data
    # im2col: [B, Ho, Wo, kh, kw, C]
    s = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, Ho, Wo, kh, kw, C),
        strides=(s[0], s[1] * stride, s[2] * stride, s[1], s[2], s[3]),
        writeable=False,
    )
    cols = windows.reshape(B * Ho * Wo, kh * kw * C)
    wmat = w.data.reshape(kh * kw * C, F)
    out = cols @ wmat
    if b is not None:
        out += b.data
    out = out.reshape(B, Ho, Wo, F)

    def bw(g):
        g2 = g.reshape(B * Ho * Wo, F)
        dw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        db = g2.sum(axis=0) if b is not None and b.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(B, Ho, Wo, kh, kw, C)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += dcols[:, :, :, i, j, :]
            dx = dxp[:, pt:pt + H, pl:pl + W, :]
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, bw, "conv2d")


def maxpool2d(x: Tensor, pool: int, stride: int, padding: str = "valid") -> Tensor:
    """Windowed max over ``x[B,H,W,C]``; padded cells never win.

    The gradient of each window goes to its first maximal element in
    row-major window order.
    """
    if pool < 1 or stride < 1:
        raise ValueError(f"pool and stride must be >= 1, got {pool}, {stride}")
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects x[B,H,W,C], got {x.shape}")
    B, H, W, C = x.shape
    (pt, pb), (pl, pr) = _pads(H, W, pool, pool, stride, padding)
    Hp, Wp = H + pt + pb, W + pl + pr
    if pool > Hp or pool > Wp:
        raise ShapeError(f"maxpool2d window {pool} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - pool) // stride + 1
    Wo = (Wp - pool) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
    best = None
    arg = np.zeros((B, Ho, Wo, C), dtype=np.int16)
    for i in range(pool):
        for j in range(pool):
            v = xp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :]
            if best is None:
                best = v.copy()
                continue
            better = v > best
            best = np.where(better, v, best)
            arg[better] = i * pool + j

    def bw(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(pool):
            for j in range(pool):
                sel = arg == (i * pool + j)
                dxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += g * sel
        return (dxp[:, pt:pt + H, pl:pl + W, :],)

    return _make(best, (x,), bw, "maxpool2d")


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    analytic: list[np.ndarray]
    numeric: list[np.ndarray]

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(
    f: Callable[..., Tensor],
    inputs: Tensor | Iterable[Tensor],
    tol: float = 1e-4,
    h: float = 1e-5,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` with central differences.

    Inputs are promoted to float64 copies. The per-element error is
    ``|a - n| / max(|a|, |n|, floor)`` and the report carries its maximum.
    Rounding puts roughly ``1e-16 * |f| / h`` of noise into each numeric
    entry, so a gradient that is exactly zero (a key bias, say) has no
    meaningful relative error; ``floor`` turns those entries into an
    absolute check at ``tol * floor``.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    with float64_mode():
        xs = [Tensor(t.data, requires_grad=True, dtype=np.float64) for t in inputs]
        out = f(*xs)
        if out.data.size != 1:
            raise ShapeError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
        out.backward()
        analytic = [x.grad if x.grad is not None else np.zeros_like(x.data) for x in xs]
        numeric = []
        with no_grad():
            for x in xs:
                num = np.zeros_like(x.data)
                flat = x.data.reshape(-1)
                nflat = num.reshape(-1)
                for idx in range(flat.size):
                    orig = flat[idx]
                    flat[idx] = orig + h
                    fp = float(f(*xs).data)
                    flat[idx] = orig - h
                    fm = float(f(*xs).data)
                    flat[idx] = orig
                    nflat[idx] = (fp - fm) / (2 * h)
                numeric.append(num)
    err = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            err = max(err, float((np.abs(a - n) / denom).max()))
    return GradCheckReport(err, tol, analytic, numeric)
