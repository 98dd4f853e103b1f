"""Differentiable operations over :class:`Tensor`.

Every op computes its forward value with numpy and, when a tape is
recording and an input requires grad, registers a backward rule. The
rules themselves are written with these same ops, so replaying them
under an active tape (``create_graph=True``) produces differentiable
gradient nodes.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, active_tape


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _emit(name: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
          backward) -> Tensor:
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.record(name, inputs, out, backward)
    return out


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``g`` down to ``shape`` (right inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape))
                 if ts == 1 and gs != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    if g.shape != shape:
        g = reshape(g, shape)
    return g


# --- elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", (a, b), a.data + b.data, bwd)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(scalar_mul(g, -1.0), b.shape)

    return _emit("sub", (a, b), a.data - b.data, bwd)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        return _unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)

    return _emit("mul", (a, b), a.data * b.data, bwd)


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        ga = _unbroadcast(div(g, b), a.shape)
        gb = _unbroadcast(scalar_mul(div(mul(g, a), mul(b, b)), -1.0), b.shape)
        return ga, gb

    return _emit("div", (a, b), a.data / b.data, bwd)


def scalar_mul(a, c: float) -> Tensor:
    a = _coerce(a)
    c = float(c)

    def bwd(g):
        return (scalar_mul(g, c),)

    return _emit("scalar_mul", (a,), a.data * c, bwd)


def neg(a) -> Tensor:
    return scalar_mul(a, -1.0)


def exp(x) -> Tensor:
    x = _coerce(x)
    out_data = np.exp(x.data)

    def bwd(g):
        return (mul(g, out),)

    out = _emit("exp", (x,), out_data, bwd)
    return out


def log(x) -> Tensor:
    x = _coerce(x)

    def bwd(g):
        return (div(g, x),)

    return _emit("log", (x,), np.log(x.data), bwd)


def sqrt(x) -> Tensor:
    x = _coerce(x)
    out_data = np.sqrt(x.data)

    def bwd(g):
        return (div(g, scalar_mul(out, 2.0)),)

    out = _emit("sqrt", (x,), out_data, bwd)
    return out


def sigmoid(x) -> Tensor:
    x = _coerce(x)
    xd = x.data
    out_data = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                        np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))

    def bwd(g):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _emit("sigmoid", (x,), out_data, bwd)
    return out


def softplus(x) -> Tensor:
    """log(1 + exp(x)), stable for large |x|; gradient is sigmoid(x)."""
    x = _coerce(x)
    xd = x.data
    out_data = np.maximum(xd, 0.0) + np.log1p(np.exp(-np.abs(xd)))

    def bwd(g):
        return (mul(g, sigmoid(x)),)

    return _emit("softplus", (x,), out_data, bwd)


def prelu(x, slope) -> Tensor:
    """x where x >= 0 else slope * x; slope is a learnable scalar tensor."""
    x, slope = _coerce(x), _coerce(slope)
    pos = (x.data >= 0).astype(np.float64)
    out_data = np.where(x.data >= 0, x.data, slope.data * x.data)

    def bwd(g):
        pos_c = Tensor(pos)
        neg_c = Tensor(1.0 - pos)
        gx = add(mul(g, pos_c), mul(mul(g, neg_c), slope))
        gslope = _unbroadcast(mul(mul(g, neg_c), x), slope.shape)
        return gx, gslope

    return _emit("prelu", (x, slope), out_data, bwd)


# --- linear algebra ----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} x {b.shape}")

    def bwd(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _emit("matmul", (a, b), a.data @ b.data, bwd)


def transpose(x) -> Tensor:
    x = _coerce(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.shape}")

    def bwd(g):
        return (transpose(g),)

    return _emit("transpose", (x,), x.data.T, bwd)


# --- shape -------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _coerce(x)
    shape = tuple(shape)

    def bwd(g):
        return (reshape(g, x.shape),)

    return _emit("reshape", (x,), x.data.reshape(shape), bwd)


def broadcast_to(x, shape) -> Tensor:
    x = _coerce(x)
    shape = tuple(shape)

    def bwd(g):
        return (_unbroadcast(g, x.shape),)

    return _emit("broadcast_to", (x,), np.broadcast_to(x.data, shape), bwd)


def concat(tensors, axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; backward splits the upstream gradient
    by the recorded segment widths."""
    ts = tuple(_coerce(t) for t in tensors)
    widths = [t.shape[axis] for t in ts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def bwd(g):
        return tuple(narrow(g, axis, int(offsets[i]), widths[i])
                     for i in range(len(ts)))

    return _emit("concat", ts, np.concatenate([t.data for t in ts], axis=axis), bwd)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    x = _coerce(x)
    index = tuple(slice(None) if i != axis else slice(start, start + length)
                  for i in range(x.ndim))
    total = x.shape[axis]

    def bwd(g):
        return (_embed(g, axis, start, total),)

    return _emit("narrow", (x,), x.data[index], bwd)


def _embed(x: Tensor, axis: int, start: int, total: int) -> Tensor:
    """Place ``x`` into a zero tensor whose ``axis`` has size ``total``."""
    shape = list(x.shape)
    length = shape[axis]
    shape[axis] = total
    out_data = np.zeros(shape)
    index = tuple(slice(None) if i != axis else slice(start, start + length)
                  for i in range(x.ndim))
    out_data[index] = x.data

    def bwd(g):
        return (narrow(g, axis, start, length),)

    return _emit("embed", (x,), out_data, bwd)


# --- indexing ----------------------------------------------------------

def take_rows(x, idx) -> Tensor:
    """Gather rows of ``x`` by integer index; duplicate indices allowed."""
    x = _coerce(x)
    idx = np.asarray(idx, dtype=np.intp)

    def bwd(g):
        return (scatter_rows(g, idx, x.shape[0]),)

    return _emit("take_rows", (x,), x.data[idx], bwd)


def scatter_rows(x, idx, num_rows: int) -> Tensor:
    """Sum rows of ``x`` into a ``num_rows``-row tensor at ``idx``."""
    x = _coerce(x)
    idx = np.asarray(idx, dtype=np.intp)
    out_data = np.zeros((num_rows,) + x.shape[1:])
    np.add.at(out_data, idx, x.data)

    def bwd(g):
        return (take_rows(g, idx),)

    return _emit("scatter_rows", (x,), out_data, bwd)


# --- reductions --------------------------------------------------------

def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _coerce(x)
    axis = _norm_axis(axis, x.ndim)

    def bwd(g):
        if axis is None:
            gk = reshape(g, (1,) * x.ndim) if x.ndim else g
        elif not keepdims:
            kshape = tuple(1 if i in axis else s for i, s in enumerate(x.shape))
            gk = reshape(g, kshape)
        else:
            gk = g
        return (broadcast_to(gk, x.shape),)

    return _emit("sum", (x,), np.sum(x.data, axis=axis, keepdims=keepdims), bwd)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _coerce(x)
    axis_n = _norm_axis(axis, x.ndim)
    if axis_n is None:
        count = x.size
    else:
        count = int(np.prod([x.shape[i] for i in axis_n]))
    return scalar_mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def max_(x, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; ties break toward the first occurrence."""
    x = _coerce(x)
    if axis is not None and not isinstance(axis, int):
        raise ShapeError("max_ supports axis=None or a single int")
    out_data = np.max(x.data, axis=axis, keepdims=keepdims)

    mask = np.zeros_like(x.data)
    if axis is None:
        flat_i = int(np.argmax(x.data))
        mask.reshape(-1)[flat_i] = 1.0
    else:
        arg = np.expand_dims(np.argmax(x.data, axis=axis), axis)
        np.put_along_axis(mask, arg, 1.0, axis=axis)

    def bwd(g):
        if axis is None:
            gk = reshape(g, (1,) * x.ndim) if x.ndim else g
        elif not keepdims:
            kshape = tuple(1 if i == axis % x.ndim else s
                           for i, s in enumerate(x.shape))
            gk = reshape(g, kshape)
        else:
            gk = g
        return (mul(broadcast_to(gk, x.shape), Tensor(mask)),)

    return _emit("max", (x,), out_data, bwd)


# --- composites --------------------------------------------------------

def l2_normalize(x, eps: float = 1e-8) -> Tensor:
    """Row-wise L2 normalization as a primitive.

    Rows with norm below ``eps`` (nodes without edges yield exact-zero
    embedding rows) map to zero and are treated as constants: their
    gradient is zero rather than the 1/eps blowup a naive x/(n+eps)
    produces, which matters once second-order terms pass through here.
    """
    x = _coerce(x)
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize expects a matrix, got {x.shape}")
    norms = np.sqrt(np.sum(x.data * x.data, axis=1, keepdims=True))
    safe = norms >= eps
    out_data = np.where(safe, x.data / np.where(safe, norms, 1.0), 0.0)

    def bwd(g):
        maskf = safe.astype(np.float64)
        mask = Tensor(maskf)
        # clamp inside the sqrt so no path ever divides by zero, even
        # when this rule is differentiated again
        s = sum_(mul(x, x), axis=1, keepdims=True)
        n = sqrt(add(mul(s, mask), Tensor(1.0 - maskf)))
        dots = sum_(mul(g, out), axis=1, keepdims=True)
        raw = div(sub(g, mul(out, dots)), n)
        return (mul(raw, broadcast_to(mask, x.shape)),)

    out = _emit("l2_normalize", (x,), out_data, bwd)
    return out


def cosine_rows(a, b) -> Tensor:
    """Cosine similarity per row of two equally-shaped matrices."""
    return sum_(mul(l2_normalize(a), l2_normalize(b)), axis=1)


def logsumexp_rows(x) -> Tensor:
    """Row-wise log-sum-exp with a detached max shift for stability."""
    x = _coerce(x)
    m = np.max(x.data, axis=1, keepdims=True)
    shifted = sub(x, Tensor(m))
    return add(log(sum_(exp(shifted), axis=1)), Tensor(m[:, 0]))


def dropout(x, p: float, rng: np.random.Generator,
            training: bool = True) -> Tensor:
    """Inverted dropout: train mode masks and rescales by 1/(1-p),
    eval mode is the identity."""
    x = _coerce(x)
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return mul(x, Tensor(mask))


# --- creation ----------------------------------------------------------

def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, int],
                   requires_grad: bool = True) -> Tensor:
    """Glorot-uniform init for a 2-D table: U(-a, a), a = sqrt(6/(n+m))."""
    n, m = shape
    a = np.sqrt(6.0 / (n + m))
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=requires_grad)


# --- operator sugar ----------------------------------------------------

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__truediv__ = lambda self, other: div(self, other)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
