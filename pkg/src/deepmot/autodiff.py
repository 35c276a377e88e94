"""Reverse-mode differentiation over dense numpy arrays.

Only the primitives needed by the Deep Hungarian Net variants, the DeepMOT
loss and the toy tracker are provided.  Every op builds a node holding its
operands and a vector-Jacobian closure; :func:`grad` walks the nodes in
reverse creation order, which is always a valid topological order because an
operand is created before any op that consumes it.

Non-finite values are treated as errors: any op producing NaN/Inf raises
:class:`NonFiniteError` instead of propagating.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "NonFiniteError", "ShapeError", "no_grad", "as_tensor", "grad",
    "add", "sub", "mul", "div", "neg", "matmul", "power", "exp", "log", "abs_",
    "maximum", "minimum2", "maximum2", "sqrt", "sigmoid", "tanh", "relu", "sum_", "mean", "reshape", "transpose",
    "concat", "stack", "softmax", "masked", "l1", "conv1d", "maxpool1d",
    "upsample1d", "gru_cell", "lstm_cell", "gru_sequence", "lstm_sequence",
    "bidirectional_pass", "ragged_bidirectional", "finite_diff_check",
]

_ids = itertools.count()
_recording = True


class NonFiniteError(FloatingPointError):
    """Raised when a forward value or a gradient contains NaN or Inf."""


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


@contextmanager
def no_grad():
    """Evaluate ops without recording the graph."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


def _check_finite(arr: np.ndarray, what: str = "value"):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite {what} encountered")


class Tensor:
    """A node in the computation graph.

    ``data`` is a numpy array (float64 by default, float32 allowed).  Leaves
    created with ``requires_grad=True`` receive ``.grad`` after
    :meth:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _vjp: Callable | None = None):
        arr = data if isinstance(data, np.ndarray) else np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        _check_finite(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad or bool(_parents)
        self._parents = _parents
        self._vjp = _vjp
        self._id = next(_ids)
        self.name = name

    # -- convenience ---------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        leaves = [n for n in _toposort(self) if not n._parents and n.requires_grad]
        for leaf, g in zip(leaves, grad(self, leaves)):
            leaf.grad = g if leaf.grad is None else leaf.grad + g

    # -- operators -----------------------------------------------------------
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __pow__(self, p): return power(self, p)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return transpose(self, axes or None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return Tensor(arr)


def _node(data: np.ndarray, parents: tuple, vjp: Callable) -> Tensor:
    """Create an op result; parents that need no gradient are pruned."""
    if not _recording or not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, _parents=parents, _vjp=vjp)


def _toposort(out: Tensor) -> list:
    seen = {}
    stack_ = [out]
    while stack_:
        node = stack_.pop()
        if node._id in seen:
            continue
        seen[node._id] = node
        stack_.extend(p for p in node._parents if p.requires_grad)
    return [seen[k] for k in sorted(seen)]


def grad(output: Tensor, wrt: Sequence[Tensor]) -> list:
    """Return d(output)/d(t) for each tensor in ``wrt``.

    ``output`` must hold a single value.  Tensors that ``output`` does not
    depend on get an all-zero gradient.
    """
    if output.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
    grads = {output._id: np.ones_like(output.data)}
    keep = {t._id for t in wrt}
    for node in reversed(_toposort(output)):
        g = grads.get(node._id) if node._id in keep else grads.pop(node._id, None)
        if g is None or not node._parents:
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if p._id in grads:
                grads[p._id] = grads[p._id] + pg
            else:
                grads[p._id] = pg
    result = []
    for t in wrt:
        g = grads.get(t._id)
        if g is None:
            g = np.zeros_like(t.data)
        _check_finite(g, "gradient")
        result.append(np.asarray(g, dtype=t.data.dtype).reshape(t.shape))
    return result


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"shapes {a.shape} and {b.shape} do not broadcast") from exc
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    if (b.data == 0).any():
        raise NonFiniteError("division by zero")
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** p
    return _node(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise NonFiniteError("log of a non-positive value")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def maximum(a, floor: float) -> Tensor:
    """Clamp from below by a constant; the gradient is zero where clamped."""
    a = as_tensor(a)
    keep = a.data > floor
    return _node(np.where(keep, a.data, floor).astype(a.data.dtype), (a,), lambda g: (g * keep,))


def _sigmoid_np(x):
    # tanh form: never overflows and avoids sign-split masking
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sqrt(a) -> Tensor:
    """Square root; the derivative at exactly zero is taken as zero."""
    a = as_tensor(a)
    if (a.data < 0).any():
        raise NonFiniteError("sqrt of a negative value")
    out = np.sqrt(a.data)
    safe = np.where(out > 0, out, 1.0)
    return _node(out, (a,), lambda g: (np.where(out > 0, g / (2.0 * safe), 0.0),))


def minimum2(a, b) -> Tensor:
    """Elementwise minimum of two tensors; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    pick = a.data <= b.data
    return _node(np.where(pick, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)))


def maximum2(a, b) -> Tensor:
    """Elementwise maximum of two tensors; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    pick = a.data >= b.data
    return _node(np.where(pick, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_np(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _node(a.data * pos, (a,), lambda g: (g * pos,))


# ---------------------------------------------------------------------------
# linear algebra, reductions and shape ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast as in :func:`numpy.matmul`."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cannot matmul {a.shape} by {b.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), vjp)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(np.asarray(out), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def _getitem(a: Tensor, idx) -> Tensor:
    def vjp(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    return _node(a.data[idx], (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(out, tuple(ts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _node(out, tuple(ts),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))))


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` (-1: row-wise on a matrix, -2: column-wise)."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), vjp)


def masked(a, mask) -> Tensor:
    """Elementwise product with a constant (non-differentiable) mask."""
    a = as_tensor(a)
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=a.data.dtype)
    if m.shape != a.shape:
        raise ShapeError(f"mask shape {m.shape} does not match {a.shape}")
    return _node(a.data * m, (a,), lambda g: (g * m,))


def l1(a) -> Tensor:
    """L1 norm of the flattened tensor."""
    return sum_(abs_(a))


# ---------------------------------------------------------------------------
# 1-D convolution helpers (conv1d DHN variant)
# ---------------------------------------------------------------------------

def conv1d(x, w, b=None) -> Tensor:
    """'Same'-padded 1-D convolution (cross-correlation).

    x: (B, C_in, L); w: (C_out, C_in, K) with odd K; b: (C_out,).
    """
    x, w = as_tensor(x), as_tensor(w)
    B, C, L = x.shape
    O, C2, K = w.shape
    if C != C2 or K % 2 == 0:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {w.shape}")
    pad = K // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    # cols[b, l, c, k] = xp[b, c, l + k]
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2).transpose(0, 2, 1, 3)
    cols = cols.reshape(B, L, C * K)
    wm = w.data.reshape(O, C * K)
    out = (cols @ wm.T).transpose(0, 2, 1)

    def vjp(g):
        gt = g.transpose(0, 2, 1)  # (B, L, O)
        gw = np.einsum("blo,blk->ok", gt, cols).reshape(w.shape)
        gcols = (gt @ wm).reshape(B, L, C, K)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, :, k:k + L] += gcols[:, :, :, k].transpose(0, 2, 1)
        return gxp[:, :, pad:pad + L], gw

    res = _node(np.ascontiguousarray(out), (x, w), vjp)
    if b is not None:
        res = add(res, reshape(b, (1, O, 1)))
    return res


def maxpool1d(x, k: int = 2) -> Tensor:
    """Non-overlapping max pooling along the last axis; length must divide by k."""
    x = as_tensor(x)
    B, C, L = x.shape
    if L % k:
        raise ShapeError(f"maxpool1d: length {L} not divisible by {k}")
    win = x.data.reshape(B, C, L // k, k)
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]

    def vjp(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=3)
        return (gw.reshape(B, C, L),)

    return _node(out, (x,), vjp)


def upsample1d(x, k: int = 2) -> Tensor:
    """Nearest-neighbour upsampling along the last axis."""
    x = as_tensor(x)
    B, C, L = x.shape
    return _node(np.repeat(x.data, k, axis=2), (x,),
                 lambda g: (g.reshape(B, C, L, k).sum(axis=3),))


# ---------------------------------------------------------------------------
# recurrent cells
# ---------------------------------------------------------------------------

def gru_cell(x, h_prev, p: dict) -> Tensor:
    """One GRU step composed from primitives.

    ``p`` holds ``w_ih`` (in, 3h), ``w_hh`` (h, 3h) and ``b`` (3h,), gates
    ordered (reset, update, candidate).  The reset gate multiplies the
    previous hidden state before the recurrent product, and the update is
    ``h = (1 - z) * h_prev + z * n``.
    """
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    hs = p["w_hh"].shape[0]
    if x.shape[-1] != p["w_ih"].shape[0] or h_prev.shape[-1] != hs:
        raise ShapeError("gru_cell: input or hidden size does not match the parameters")
    squeeze = x.ndim == 1
    if squeeze:
        x, h_prev = reshape(x, (1, -1)), reshape(h_prev, (1, -1))
    xp = x @ p["w_ih"] + p["b"]
    w_hh = p["w_hh"]
    rz = sigmoid(xp[:, :2 * hs] + h_prev @ w_hh[:, :2 * hs])
    r, z = rz[:, :hs], rz[:, hs:]
    n = tanh(xp[:, 2 * hs:] + (r * h_prev) @ w_hh[:, 2 * hs:])
    h = h_prev + z * (n - h_prev)
    return reshape(h, (-1,)) if squeeze else h


def lstm_cell(x, state, p: dict):
    """One LSTM step; gates ordered (input, forget, cell, output).

    ``state`` is ``(h, c)``; returns the new ``(h, c)``.
    """
    x = as_tensor(x)
    h_prev, c_prev = (as_tensor(s) for s in state)
    hs = p["w_hh"].shape[0]
    squeeze = x.ndim == 1
    if squeeze:
        x, h_prev, c_prev = (reshape(t, (1, -1)) for t in (x, h_prev, c_prev))
    a = x @ p["w_ih"] + h_prev @ p["w_hh"] + p["b"]
    ifo = sigmoid(concat([a[:, :2 * hs], a[:, 3 * hs:]], axis=1))
    i, f, o = ifo[:, :hs], ifo[:, hs:2 * hs], ifo[:, 2 * hs:]
    g = tanh(a[:, 2 * hs:3 * hs])
    c = f * c_prev + i * g
    h = o * tanh(c)
    if squeeze:
        return reshape(h, (-1,)), reshape(c, (-1,))
    return h, c


def _needs_graph(*ts) -> bool:
    return _recording and any(t.requires_grad for t in ts)


def _sequence_order(T: int, reverse: bool):
    return range(T - 1, -1, -1) if reverse else range(T)


def gru_sequence(x, p: dict, reverse: bool = False) -> Tensor:
    """Run a GRU over a whole sequence as one fused op.

    x: (T, B, in) -> hidden states (T, B, h), initial state zero.  The
    backward pass is hand-written BPTT; it agrees with unrolled
    :func:`gru_cell` calls.
    """
    x = as_tensor(x)
    w_ih, w_hh, b = (as_tensor(p[k]) for k in ("w_ih", "w_hh", "b"))
    T, B, _ = x.shape
    hs = w_hh.shape[0]
    if T == 0:
        raise ShapeError("empty sequence")
    if x.shape[2] != w_ih.shape[0]:
        raise ShapeError(f"gru_sequence: input size {x.shape[2]} != {w_ih.shape[0]}")
    W = w_hh.data
    w_rz, w_n = W[:, :2 * hs], W[:, 2 * hs:]
    xp = x.data @ w_ih.data + b.data
    dt = xp.dtype
    H = np.empty((T, B, hs), dt)
    h = np.zeros((B, hs), dt)
    if not _needs_graph(x, w_ih, w_hh, b):
        for t in _sequence_order(T, reverse):
            rz = _sigmoid_np(xp[t, :, :2 * hs] + h @ w_rz)
            n = np.tanh(xp[t, :, 2 * hs:] + (rz[:, :hs] * h) @ w_n)
            h = h + rz[:, hs:] * (n - h)
            H[t] = h
        return Tensor(H)
    RZ = np.empty((T, B, 2 * hs), dt)
    N = np.empty((T, B, hs), dt)
    prev = np.empty((T, B, hs), dt)
    for t in _sequence_order(T, reverse):
        prev[t] = h
        rz = _sigmoid_np(xp[t, :, :2 * hs] + h @ w_rz)
        n = np.tanh(xp[t, :, 2 * hs:] + (rz[:, :hs] * h) @ w_n)
        h = h + rz[:, hs:] * (n - h)
        RZ[t], N[t], H[t] = rz, n, h

    def vjp(g):
        dxp = np.empty_like(xp)
        dh_next = np.zeros((B, hs), dt)
        for t in _sequence_order(T, not reverse):
            hp, rz, n = prev[t], RZ[t], N[t]
            r, z = rz[:, :hs], rz[:, hs:]
            dh = g[t] + dh_next
            da_n = dh * z * (1.0 - n * n)
            d_rh = da_n @ w_n.T
            da_r = d_rh * hp * r * (1.0 - r)
            da_z = dh * (n - hp) * z * (1.0 - z)
            dxp[t, :, :hs] = da_r
            dxp[t, :, hs:2 * hs] = da_z
            dxp[t, :, 2 * hs:] = da_n
            dh_next = dh * (1.0 - z) + d_rh * r + dxp[t, :, :2 * hs] @ w_rz.T
        # weight gradients in one product each instead of per step
        flat = dxp.reshape(T * B, 3 * hs)
        hp_flat = prev.reshape(T * B, hs)
        dW = np.empty_like(W)
        dW[:, :2 * hs] = hp_flat.T @ flat[:, :2 * hs]
        dW[:, 2 * hs:] = (RZ[:, :, :hs] * prev).reshape(T * B, hs).T @ flat[:, 2 * hs:]
        dx = dxp @ w_ih.data.T
        dw_ih = x.data.reshape(T * B, -1).T @ flat
        return dx, dw_ih, dW, flat.sum(axis=0)

    return _node(H, (x, w_ih, w_hh, b), vjp)


def lstm_sequence(x, p: dict, reverse: bool = False) -> Tensor:
    """Fused LSTM over a sequence: (T, B, in) -> (T, B, h), zero initial state."""
    x = as_tensor(x)
    w_ih, w_hh, b = (as_tensor(p[k]) for k in ("w_ih", "w_hh", "b"))
    T, B, _ = x.shape
    hs = w_hh.shape[0]
    if T == 0:
        raise ShapeError("empty sequence")
    if x.shape[2] != w_ih.shape[0]:
        raise ShapeError(f"lstm_sequence: input size {x.shape[2]} != {w_ih.shape[0]}")
    W = w_hh.data
    xp = x.data @ w_ih.data + b.data
    dt = xp.dtype
    H = np.empty((T, B, hs), dt)
    h = np.zeros((B, hs), dt)
    c = np.zeros((B, hs), dt)
    if not _needs_graph(x, w_ih, w_hh, b):
        for t in _sequence_order(T, reverse):
            a = xp[t] + h @ W
            gates = _sigmoid_np(a)
            c = gates[:, hs:2 * hs] * c + gates[:, :hs] * np.tanh(a[:, 2 * hs:3 * hs])
            h = gates[:, 3 * hs:] * np.tanh(c)
            H[t] = h
        return Tensor(H)
    C = np.empty((T, B, hs), dt)
    G = np.empty((T, B, 4 * hs), dt)  # activated gates i, f, g, o
    Hp = np.empty((T, B, hs), dt)
    Cp = np.empty((T, B, hs), dt)
    for t in _sequence_order(T, reverse):
        Hp[t], Cp[t] = h, c
        a = xp[t] + h @ W
        gates = _sigmoid_np(a)
        gates[:, 2 * hs:3 * hs] = np.tanh(a[:, 2 * hs:3 * hs])
        i, f, gg, o = (gates[:, k * hs:(k + 1) * hs] for k in range(4))
        c = f * c + i * gg
        h = o * np.tanh(c)
        H[t], C[t], G[t] = h, c, gates

    def vjp(g):
        da = np.empty_like(xp)
        dh_next = np.zeros((B, hs), dt)
        dc_next = np.zeros((B, hs), dt)
        for t in _sequence_order(T, not reverse):
            gates = G[t]
            i, f, gg, o = (gates[:, k * hs:(k + 1) * hs] for k in range(4))
            tc = np.tanh(C[t])
            dh = g[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            da[t, :, :hs] = dc * gg * i * (1 - i)
            da[t, :, hs:2 * hs] = dc * Cp[t] * f * (1 - f)
            da[t, :, 2 * hs:3 * hs] = dc * i * (1 - gg * gg)
            da[t, :, 3 * hs:] = dh * tc * o * (1 - o)
            dc_next = dc * f
            dh_next = da[t] @ W.T
        flat = da.reshape(T * B, 4 * hs)
        dW = Hp.reshape(T * B, hs).T @ flat
        dx = da @ w_ih.data.T
        dw_ih = x.data.reshape(T * B, -1).T @ flat
        return dx, dw_ih, dW, flat.sum(axis=0)

    return _node(H, (x, w_ih, w_hh, b), vjp)


_SEQUENCE_OPS = {"gru": gru_sequence, "lstm": lstm_sequence}


def _paired_scan(xf: np.ndarray, xb: np.ndarray, p_fwd: dict, p_bwd: dict, cell: str,
                 block: int = 4096) -> np.ndarray:
    """Inference-only scan of two recurrent cells in one loop.

    ``xf`` feeds the ``p_fwd`` cell and ``xb`` (already time-reversed by the
    caller) the ``p_bwd`` cell; both are (T, B, in) and start from a zero
    state.  The directions share each time step's batched product, and
    input projections are formed ``block`` steps at a time to bound memory.
    Returns the states as (T, 2, B, h).
    """
    T, B, _ = xf.shape
    hs = p_fwd["w_hh"].shape[0]
    dt = np.result_type(xf.dtype, p_fwd["w_ih"].dtype)
    W = np.stack([p_fwd["w_hh"], p_bwd["w_hh"]]).astype(dt)
    H = np.empty((T, 2, B, hs), dt)
    h = np.zeros((2, B, hs), dt)
    c = np.zeros((2, B, hs), dt)
    w_rz, w_n = W[:, :, :2 * hs], W[:, :, 2 * hs:]
    for t0 in range(0, T, block):
        xp = np.stack([xf[t0:t0 + block] @ p_fwd["w_ih"] + p_fwd["b"],
                       xb[t0:t0 + block] @ p_bwd["w_ih"] + p_bwd["b"]], axis=1).astype(dt)
        for k in range(xp.shape[0]):
            if cell == "gru":
                rz = _sigmoid_np(xp[k, :, :, :2 * hs] + h @ w_rz)
                n = np.tanh(xp[k, :, :, 2 * hs:] + (rz[:, :, :hs] * h) @ w_n)
                h = h + rz[:, :, hs:] * (n - h)
            else:
                a = xp[k] + h @ W
                gates = _sigmoid_np(a)
                c = gates[:, :, hs:2 * hs] * c + gates[:, :, :hs] * np.tanh(a[:, :, 2 * hs:3 * hs])
                h = gates[:, :, 3 * hs:] * np.tanh(c)
            H[t0 + k] = h
    return H


def _plain(p: dict) -> dict:
    return {k: as_tensor(v).data for k, v in p.items()}


def ragged_bidirectional(seqs: Sequence, p_fwd: dict, p_bwd: dict, cell: str = "gru") -> list:
    """Bidirectional pass over sequences of different lengths, without a graph.

    ``seqs`` holds (L_b, in) arrays.  They are packed into one batch with
    every sequence starting at step 0 in both directions, so trailing
    padding never reaches a real output.  Returns a list of (L_b, 2h)
    arrays equal to :func:`bidirectional_pass` on each sequence alone.
    """
    if cell not in _SEQUENCE_OPS:
        raise ValueError(f"unknown cell {cell!r}")
    seqs = [np.asarray(q) for q in seqs]
    if not seqs or min(len(q) for q in seqs) == 0:
        raise ShapeError("empty sequence")
    T, B = max(len(q) for q in seqs), len(seqs)
    xf = np.zeros((T, B, seqs[0].shape[1]), seqs[0].dtype)
    xb = np.zeros_like(xf)
    for b, q in enumerate(seqs):
        xf[:len(q), b] = q
        xb[:len(q), b] = q[::-1]
    H = _paired_scan(xf, xb, _plain(p_fwd), _plain(p_bwd), cell)
    return [np.concatenate([H[:len(q), 0, b], H[len(q) - 1::-1, 1, b]], axis=1)
            for b, q in enumerate(seqs)]


def bidirectional_pass(seq, p_fwd: dict, p_bwd: dict, cell: str = "gru") -> Tensor:
    """Bidirectional recurrent pass.

    ``seq`` is (T, in) or batched (T, B, in).  Output element t is the
    forward state after elements 1..t concatenated with the backward state
    after elements T..t, giving (T, 2h) or (T, B, 2h).
    """
    seq = as_tensor(seq)
    if seq.ndim == 0 or seq.shape[0] == 0:
        raise ShapeError("empty sequence")
    if p_fwd["w_hh"].shape != p_bwd["w_hh"].shape:
        raise ShapeError("forward and backward cells must share the hidden size")
    unbatched = seq.ndim == 2
    if unbatched:
        seq = reshape(seq, (seq.shape[0], 1, seq.shape[1]))
    if cell not in _SEQUENCE_OPS:
        raise ValueError(f"unknown cell {cell!r}")
    params = [as_tensor(v) for v in (*p_fwd.values(), *p_bwd.values())]
    if not _needs_graph(seq, *params):
        H = _paired_scan(seq.data, seq.data[::-1], _plain(p_fwd), _plain(p_bwd), cell)
        out = Tensor(np.concatenate([H[:, 0], H[::-1, 1]], axis=2))
    else:
        run = _SEQUENCE_OPS[cell]
        out = concat([run(seq, p_fwd), run(seq, p_bwd, reverse=True)], axis=2)
    if unbatched:
        out = reshape(out, (out.shape[0], out.shape[2]))
    return out


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_diff_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5,
                      analytic: np.ndarray | None = None, floor: float = 1e-8,
                      coords: Iterable[int] | None = None) -> float:
    """Worst relative error between the analytic gradient and central differences.

    ``f`` maps a tensor shaped like ``x`` to a scalar tensor.  The analytic
    gradient comes from :func:`grad` unless supplied.  The error per
    coordinate is ``|analytic - numeric| / max(|numeric|, floor)``; only
    ``coords`` (flat indices) are probed when given.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if analytic is None:
        leaf = Tensor(x0.copy(), requires_grad=True)
        analytic = grad(f(leaf), [leaf])[0]
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    flat = x0.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        vals = []
        for step in (eps, -eps):
            xp = flat.copy()
            xp[i] += step
            with no_grad():
                v = float(f(Tensor(xp.reshape(x0.shape))).data.reshape(-1)[0])
            if not np.isfinite(v):
                raise NonFiniteError("non-finite evaluation in finite differences")
            vals.append(v)
        numeric = (vals[0] - vals[1]) / (2 * eps)
        err = abs(analytic[i] - numeric) / max(abs(numeric), floor)
        worst = max(worst, err)
    return worst
