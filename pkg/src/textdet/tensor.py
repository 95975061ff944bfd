"""Dense tensors with reverse-mode automatic differentiation on numpy storage.

Every network module in the package builds its forward pass from the ops
defined here; calling :func:`backward` on a scalar loss fills the ``grad``
buffers of all reachable tensors that require gradients.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op's contract."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference-only passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float array, optionally tracked in the autodiff graph.

    ``grad`` starts empty and is summed into (never overwritten) by
    :func:`backward`; repeated backward passes without a reset accumulate.
    """

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: tuple[Tensor, ...],
            backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._backward = backward
        out._parents = parents
    return out


def constant(data, like: Tensor | None = None) -> Tensor:
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=False)


# ---------------------------------------------------------------------------
# elementwise / arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(b))


def scale(a: Tensor, s: float) -> Tensor:
    return _result(a.data * s, (a,), lambda g: (g * s,))


def add_scalar(a: Tensor, s: float) -> Tensor:
    return _result(a.data + s, (a,), lambda g: (g,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _result(out, (a,), lambda g: (g * mask,))


def smooth_l1(a: Tensor) -> Tensor:
    """Elementwise 0.5*x^2 for |x| < 1, |x| - 0.5 otherwise."""
    x = a.data
    small = np.abs(x) < 1.0
    out = np.where(small, 0.5 * x * x, np.abs(x) - 0.5)
    return _result(out, (a,), lambda g: (g * np.where(small, x, np.sign(x)),))


def sum_all(a: Tensor) -> Tensor:
    return _result(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                   lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),))


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def permute(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows along axis 0; repeated indices scatter-add in backward.

    Doubles as the embedding lookup (table rows by token id).
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {a.shape[0]} rows")

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _result(a.data[idx], (a,), bwd)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: mixed shapes {shapes}")
    data = np.stack([t.data for t in tensors])
    return _result(data, tuple(tensors), lambda g: tuple(g[i] for i in range(len(tensors))))


def concat_lastdim(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_lastdim: leading shape mismatch {a.shape} vs {b.shape}")
    na = a.shape[-1]
    return _result(np.concatenate([a.data, b.data], axis=-1), (a, b),
                   lambda g: (g[..., :na], g[..., na:]))


def repeat_rows(a: Tensor, n: int) -> Tensor:
    """Broadcast a vector (or single row) to ``n`` rows; backward sums rows."""
    row = a.data.reshape(1, -1)
    return _result(np.repeat(row, n, axis=0), (a,),
                   lambda g: (g.sum(axis=0).reshape(a.shape),))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D or batched 3-D matrix product (batch dims must match exactly)."""
    if a.data.ndim not in (2, 3) or b.data.ndim != a.data.ndim:
        raise ShapeError(f"matmul: expected matching 2-D/3-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.data.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        at = np.swapaxes(a.data, -1, -2)
        bt = np.swapaxes(b.data, -1, -2)
        return (g @ bt, at @ g)

    return _result(a.data @ b.data, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map rows(x) @ w + b with the bias broadcast over rows."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: incompatible shapes x={x.shape} w={w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} does not match output dim {w.shape[1]}")

    def bwd(g):
        return (g @ w.data.T, x.data.T @ g, g.sum(axis=0))

    return _result(x.data @ w.data + b.data, (x, w, b), bwd)


# ---------------------------------------------------------------------------
# activations

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def softmax_lastdim(a: Tensor) -> Tensor:
    # max subtraction for overflow stability
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _result(out, (a,), bwd)


def activation(a: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "softmax_lastdim":
        return softmax_lastdim(a)
    raise ValueError(f"unknown activation kind: {kind}")


# ---------------------------------------------------------------------------
# normalization

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to mean 0 / population variance 1, then rescale."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: affine shape must be ({d},)")
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (dx, (g * xhat).sum(axis=lead), g.sum(axis=lead))

    return _result(out, (x, gamma, beta), bwd)


def l2_normalize(v: Tensor, eps: float = 1e-12) -> Tensor:
    """v / max(||v||_2, eps) along the last dimension."""
    norm = np.sqrt((v.data ** 2).sum(axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    out = v.data / denom

    def bwd(g):
        # inside the eps guard the denominator is a constant
        proj = (g * out).sum(axis=-1, keepdims=True)
        gv = np.where(norm >= eps, (g - out * proj) / denom, g / eps)
        return (gv,)

    return _result(out, (v,), bwd)


# ---------------------------------------------------------------------------
# convolution and pooling

def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over [N, C, H, W] inputs with an [O, C, kh, kw] kernel."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input/weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d: input channels {c} != weight channels {cw}")
    if b.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({o},)")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel ({kh},{kw}) larger than padded input ({hp},{wp})")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # [N, P, C*kh*kw] with P = ho*wo
    col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, -1)
    out = np.matmul(col, wmat.T) + b.data
    out = out.transpose(0, 2, 1).reshape(n, o, ho, wo)

    def bwd(g):
        gmat = g.reshape(n, o, ho * wo).transpose(0, 2, 1)  # [N, P, O]
        gw = np.einsum("npo,npk->ok", gmat, col, optimize=True).reshape(w.shape)
        gb = g.sum(axis=(0, 2, 3))
        gcol = np.matmul(gmat, wmat)  # [N, P, C*kh*kw]
        gcol = gcol.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
        for ki in range(kh):
            for kj in range(kw):
                gxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += gcol[:, :, ki, kj]
        if padding:
            gxp = gxp[:, :, padding:hp - padding, padding:wp - padding]
        return (gxp, gw, gb)

    return _result(out, (x, w, b), bwd)


def crop2d(x: Tensor, r0: int, r1: int, c0: int, c1: int) -> Tensor:
    """Spatial crop of a [C, H, W] map; backward zero-pads into place."""
    if x.data.ndim != 3:
        raise ShapeError(f"crop2d: expected [C, H, W], got {x.shape}")
    c, h, w = x.shape
    if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
        raise ValueError(f"crop2d: window ({r0}:{r1}, {c0}:{c1}) outside {h}x{w}")

    def bwd(g):
        gx = np.zeros((c, h, w), dtype=g.dtype)
        gx[:, r0:r1, c0:c1] = g
        return (gx,)

    return _result(x.data[:, r0:r1, c0:c1].copy(), (x,), bwd)


def _pool_window(size: int, out_size: int, i: int) -> tuple[int, int]:
    start = (i * size) // out_size
    end = -(-((i + 1) * size) // out_size)  # ceil
    return start, end


def adaptive_max_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Max-pool a [C, h, w] map to [C, out_h, out_w]; ties route to the first
    row-major position so the backward pass is deterministic."""
    if out_h < 1 or out_w < 1:
        raise ValueError("adaptive_max_pool2d: output size must be >= 1")
    if x.data.ndim != 3:
        raise ShapeError(f"adaptive_max_pool2d: expected [C, h, w], got {x.shape}")
    c, h, w = x.shape
    out = np.empty((c, out_h, out_w), dtype=x.dtype)
    argpos = np.empty((c, out_h, out_w), dtype=np.int64)  # flat index into [h*w]
    for i in range(out_h):
        r0, r1 = _pool_window(h, out_h, i)
        for j in range(out_w):
            c0, c1 = _pool_window(w, out_w, j)
            win = x.data[:, r0:r1, c0:c1].reshape(c, -1)
            k = win.argmax(axis=1)
            out[:, i, j] = win[np.arange(c), k]
            argpos[:, i, j] = (r0 + k // (c1 - c0)) * w + (c0 + k % (c1 - c0))

    def bwd(g):
        gx = np.zeros((c, h * w), dtype=g.dtype)
        np.add.at(gx, (np.repeat(np.arange(c), out_h * out_w), argpos.reshape(c, -1).ravel()),
                  g.reshape(c, -1).ravel())
        return (gx.reshape(c, h, w),)

    return _result(out, (x,), bwd)


# ---------------------------------------------------------------------------
# losses

def bce_elements(pred: Tensor, target: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Per-element binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    t = np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ShapeError(f"bce: target shape {t.shape} != prediction shape {pred.shape}")
    p = clamp(pred, eps, 1.0 - eps)
    q = clamp(add_scalar(neg(pred), 1.0), eps, 1.0 - eps)
    pos = mul(log(p), constant(t, like=pred))
    negt = mul(log(q), constant(1.0 - t, like=pred))
    return neg(add(pos, negt))


# ---------------------------------------------------------------------------
# reverse pass

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    Each graph node is visited exactly once in reverse topological order;
    gradients are accumulated (+=) so repeated calls sum.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad += g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = pg.astype(parent.dtype, copy=False).reshape(parent.shape)
            if id(parent) in flow:
                flow[id(parent)] += pg
            else:
                flow[id(parent)] = pg.copy()


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
