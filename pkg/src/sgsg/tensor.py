"""Dense numpy tensors with a define-by-run tape for reverse-mode autodiff.

Operations executed while a :class:`Tape` is active are recorded as nodes in
execution order; :meth:`Tape.backward` walks them once in reverse.  Outside a
tape nothing is recorded, which is how inference runs.

All operations accept a leading batch dimension.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_DTYPE = np.float32
_ACTIVE: list["Tape"] = []


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily switch the dtype used for new tensors (32 or 64)."""
    global _DTYPE
    if bits not in (32, 64):
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    old = _DTYPE
    _DTYPE = np.float64 if bits == 64 else np.float32
    try:
        yield
    finally:
        _DTYPE = old


class DimensionError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

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

    def __getitem__(self, idx):
        return take(self, idx)


class Node:
    __slots__ = ("inputs", "outputs", "backward")

    def __init__(self, inputs, outputs, backward):
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended as operations execute, so operands always precede
    their consumers.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            out_grads = [o.grad for o in node.outputs]
            if all(g is None for g in out_grads):
                continue
            out_grads = [np.zeros_like(o.data) if g is None else g
                         for o, g in zip(node.outputs, out_grads)]
            in_grads = node.backward(out_grads)
            for inp, g in zip(node.inputs, in_grads):
                if g is None or not inp.requires_grad:
                    continue
                inp.grad = g if inp.grad is None else inp.grad + g


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _record(inputs: Sequence[Tensor], outputs: Sequence[Tensor],
            backward: Callable[[list[np.ndarray]], Sequence[np.ndarray | None]]):
    if not _ACTIVE or not any(t.requires_grad for t in inputs):
        return
    for o in outputs:
        o.requires_grad = True
    _ACTIVE[-1].nodes.append(Node(list(inputs), list(outputs), backward))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _out(data) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.grad = None
    t.requires_grad = False
    return t


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _out(a.data + b.data)
    _record([a, b], [out], lambda g: (_unbroadcast(g[0], a.shape),
                                      _unbroadcast(g[0], b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _out(a.data - b.data)
    _record([a, b], [out], lambda g: (_unbroadcast(g[0], a.shape),
                                      _unbroadcast(-g[0], b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if b.data.dtype != a.data.dtype and b.data.ndim == 0:
        b = Tensor(b.data, dtype=a.data.dtype)
    out = _out(a.data * b.data)
    _record([a, b], [out], lambda g: (_unbroadcast(g[0] * b.data, a.shape),
                                      _unbroadcast(g[0] * a.data, b.shape)))
    return out


def square(x: Tensor) -> Tensor:
    out = _out(x.data * x.data)
    _record([x], [out], lambda g: (2.0 * x.data * g[0],))
    return out


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    out = _out(y)
    _record([x], [out], lambda g: (g[0] * y,))
    return out


def expm1(x: Tensor) -> Tensor:
    """exp(x) - 1 without cancellation near zero."""
    y = np.expm1(x.data)
    out = _out(y)
    _record([x], [out], lambda g: (g[0] * (y + 1.0),))
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = _out(np.where(mask, x.data, 0).astype(x.dtype))
    _record([x], [out], lambda g: (g[0] * mask,))
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    out = _out(y)
    _record([x], [out], lambda g: (g[0] * y * (1 - y),))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = _out(y)
    _record([x], [out], lambda g: (g[0] * (1 - y * y),))
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input is inside."""
    inside = (x.data >= lo) & (x.data <= hi)
    out = _out(np.clip(x.data, lo, hi))
    _record([x], [out], lambda g: (g[0] * inside,))
    return out


# --- reductions / shape ----------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    out = _out(x.data.sum())
    _record([x], [out], lambda g: (np.broadcast_to(g[0], x.shape).copy(),))
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = _out(x.data.mean())
    _record([x], [out], lambda g: (np.full_like(x.data, g[0] / n),))
    return out


def sum_axis(x: Tensor, axis: int) -> Tensor:
    out = _out(x.data.sum(axis=axis))
    _record([x], [out], lambda g: (np.broadcast_to(np.expand_dims(g[0], axis), x.shape).copy(),))
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = _out(x.data.reshape(shape))
    _record([x], [out], lambda g: (g[0].reshape(x.shape),))
    return out


def take(x: Tensor, idx) -> Tensor:
    """Basic or fancy indexing; gradient scatters back with accumulation."""
    out = _out(x.data[idx])

    def back(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g[0])
        return (dx,)

    _record([x], [out], back)
    return out


def gather_rows(x: Tensor, index) -> Tensor:
    return take(x, np.asarray(index, dtype=np.intp))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = _out(np.concatenate([x.data for x in xs], axis=axis))
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    _record(xs, [out], lambda g: np.split(g[0], sizes, axis=axis))
    return out


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    out = _out(np.stack([x.data for x in xs], axis=axis))

    def back(g):
        return [np.take(g[0], i, axis=axis) for i in range(len(xs))]

    _record(xs, [out], back)
    return out


# --- linear algebra --------------------------------------------------------

def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """y = W x + b, with x of shape [n_in] or [batch, n_in]."""
    if x.shape[-1] != W.shape[1] or (b is not None and b.shape != (W.shape[0],)):
        raise DimensionError(
            f"affine: x {x.shape}, W {W.shape}, b {None if b is None else b.shape}")
    y = x.data @ W.data.T
    if b is not None:
        y = y + b.data
    out = _out(y)

    def back(g):
        gy = g[0]
        dx = gy @ W.data
        g2 = gy.reshape(-1, gy.shape[-1])
        dW = g2.T @ x.data.reshape(-1, x.shape[-1])
        if b is None:
            return dx, dW
        return dx, dW, g2.sum(axis=0)

    _record([x, W] if b is None else [x, W, b], [out], back)
    return out


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              W_ih: Tensor, W_hh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step; gate blocks ordered (input, forget, candidate, output)."""
    d_h = h_prev.shape[-1]
    if (W_ih.shape != (4 * d_h, x.shape[-1]) or W_hh.shape != (4 * d_h, d_h)
            or b.shape != (4 * d_h,) or c_prev.shape != h_prev.shape):
        raise DimensionError(
            f"lstm_cell: x {x.shape}, h {h_prev.shape}, c {c_prev.shape}, "
            f"W_ih {W_ih.shape}, W_hh {W_hh.shape}, b {b.shape}")
    z = x.data @ W_ih.data.T + h_prev.data @ W_hh.data.T + b.data
    i = _sigmoid(z[..., :d_h])
    f = _sigmoid(z[..., d_h:2 * d_h])
    gg = np.tanh(z[..., 2 * d_h:3 * d_h])
    o = _sigmoid(z[..., 3 * d_h:])
    c = f * c_prev.data + i * gg
    tc = np.tanh(c)
    h = o * tc
    h_out, c_out = _out(h), _out(c)

    def back(grads):
        dh, dc = grads
        dc = dc + dh * o * (1 - tc * tc)
        do = dh * tc
        di = dc * gg
        df = dc * c_prev.data
        dg = dc * i
        dz = np.concatenate([di * i * (1 - i), df * f * (1 - f),
                             dg * (1 - gg * gg), do * o * (1 - o)], axis=-1)
        dz2 = dz.reshape(-1, 4 * d_h)
        return (dz @ W_ih.data, dz @ W_hh.data, dc * f,
                dz2.T @ x.data.reshape(-1, x.shape[-1]),
                dz2.T @ h_prev.data.reshape(-1, d_h),
                dz2.sum(axis=0))

    _record([x, h_prev, c_prev, W_ih, W_hh, b], [h_out, c_out], back)
    return h_out, c_out


# --- convolution / pooling -------------------------------------------------

def _conv_out(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, K: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [B,C,H,W] (or [C,H,W]) with K [C',C,k,k]."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    Bn, C, H, W = xd.shape
    Co, Ci, kh, kw = K.shape
    if Ci != C:
        raise DimensionError(f"conv2d: input has {C} channels, kernel expects {Ci}")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {H}x{W}")
    Ho, Wo = _conv_out(H, kh, stride, padding), _conv_out(W, kw, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    s = stride
    y = np.zeros((Bn, Co, Ho, Wo), dtype=xd.dtype)
    for di in range(kh):
        for dj in range(kw):
            patch = xp[:, :, di:di + s * Ho:s, dj:dj + s * Wo:s]
            y += np.einsum("oc,bchw->bohw", K.data[:, :, di, dj], patch)
    if b is not None:
        y += b.data[None, :, None, None]
    out = _out(y[0] if squeeze else y)

    def back(g):
        gy = g[0][None] if squeeze else g[0]
        dxp = np.zeros_like(xp)
        dK = np.zeros_like(K.data)
        for di in range(kh):
            for dj in range(kw):
                patch = xp[:, :, di:di + s * Ho:s, dj:dj + s * Wo:s]
                dK[:, :, di, dj] = np.einsum("bohw,bchw->oc", gy, patch)
                dxp[:, :, di:di + s * Ho:s, dj:dj + s * Wo:s] += np.einsum(
                    "oc,bohw->bchw", K.data[:, :, di, dj], gy)
        dx = dxp[:, :, padding:padding + H, padding:padding + W]
        if squeeze:
            dx = dx[0]
        grads = [dx, dK]
        if b is not None:
            grads.append(gy.sum(axis=(0, 2, 3)))
        return grads

    _record([x, K] if b is None else [x, K, b], [out], back)
    return out


def _pool_view(xd: np.ndarray, k: int):
    Bn, C, H, W = xd.shape
    Ho, Wo = H // k, W // k
    return xd[:, :, :Ho * k, :Wo * k].reshape(Bn, C, Ho, k, Wo, k), Ho, Wo


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    v, Ho, Wo = _pool_view(xd, k)
    y = v.mean(axis=(3, 5))
    out = _out(y[0] if squeeze else y)

    def back(g):
        gy = g[0][None] if squeeze else g[0]
        dx = np.zeros_like(xd)
        dx[:, :, :Ho * k, :Wo * k] = np.repeat(np.repeat(gy, k, axis=2), k, axis=3) / (k * k)
        return (dx[0] if squeeze else dx,)

    _record([x], [out], back)
    return out


def max_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first max."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    v, Ho, Wo = _pool_view(xd, k)
    Bn, C = xd.shape[:2]
    flat = v.transpose(0, 1, 2, 4, 3, 5).reshape(Bn, C, Ho, Wo, k * k)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    out = _out(y[0] if squeeze else y)

    def back(g):
        gy = g[0][None] if squeeze else g[0]
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, arg[..., None], gy[..., None], axis=-1)
        dv = dflat.reshape(Bn, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros_like(xd)
        dx[:, :, :Ho * k, :Wo * k] = dv.reshape(Bn, C, Ho * k, Wo * k)
        return (dx[0] if squeeze else dx,)

    _record([x], [out], back)
    return out


def lstm_sequence(xs: Sequence[Tensor], W_ih: Tensor, W_hh: Tensor, b: Tensor,
                  h0: Tensor | None = None, c0: Tensor | None = None
                  ) -> tuple[Tensor, Tensor]:
    """Run lstm_cell over xs (each [batch, d_in]); zero initial state by default."""
    d_h = W_hh.shape[1]
    lead = xs[0].shape[:-1]
    h = h0 if h0 is not None else Tensor(np.zeros(lead + (d_h,), dtype=xs[0].dtype))
    c = c0 if c0 is not None else Tensor(np.zeros(lead + (d_h,), dtype=xs[0].dtype))
    for x in xs:
        h, c = lstm_cell(x, h, c, W_ih, W_hh, b)
    return h, c
