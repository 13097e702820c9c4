"""Reverse-mode automatic differentiation over dense float64 tensors.

Tape-based: ops executed inside a ``record()`` block append backward
closures to the active Graph; ``backward(loss)`` replays the tape in
reverse (recording order is a valid topological order). Outside a
``record()`` block ops run forward-only, which keeps rollouts cheap.

float64 throughout so finite-difference gradient checks can be strict.
"""

import numpy as np


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


class GradientError(RuntimeError):
    pass


_active_graph = None
_next_node_id = 0


def _new_node_id():
    global _next_node_id
    _next_node_id += 1
    return _next_node_id


class Graph:
    """Tape of recorded operations, replayed in reverse by backward()."""

    def __init__(self):
        self._tape = []  # list of backward closures, recording order
        self._consumed = False

    def __enter__(self):
        global _active_graph
        if _active_graph is not None:
            raise GraphError("nested record() blocks are not supported")
        _active_graph = self
        return self

    def __exit__(self, *exc):
        global _active_graph
        _active_graph = None
        return False


def record():
    """Open a fresh tape: ``with record() as g: ...; backward(loss)``."""
    return Graph()


class Tensor:
    """Dense float64 tensor with optional gradient buffer.

    ``requires_grad`` marks leaf parameters; intermediate results inherit
    it from their inputs. ``grad`` is allocated lazily during backward.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "graph")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = _new_node_id()
        self.graph = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data):
    """Leaf parameter tensor (receives gradients)."""
    return Tensor(data, requires_grad=True)


def const(data):
    """Constant input tensor (no gradient)."""
    return Tensor(data, requires_grad=False)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _result(data, inputs, backward_fn):
    """Wrap an op result; record backward_fn if taping and grads needed."""
    out = Tensor(data)
    if _active_graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.graph = _active_graph
        _active_graph._tape.append((out, backward_fn))
    return out


def backward(loss):
    """Populate .grad of every tensor contributing to the scalar loss.

    Gradients accumulate additively across multiple uses of a tensor.
    A graph can be traversed once; re-recording is required afterwards.
    """
    if not isinstance(loss, Tensor):
        raise GraphError("backward expects a Tensor")
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    g = loss.graph
    if g is None:
        raise GraphError("loss is detached from any recorded graph")
    if g._consumed:
        raise GraphError("backward called twice on the same graph")
    g._consumed = True
    loss._accum(np.ones_like(loss.data))
    for out, fn in reversed(g._tape):
        if out.grad is not None:
            fn(out.grad)


# ---------------------------------------------------------------------------
# broadcast helpers: only same-shape, scalar-vs-tensor and explicit rowvec
# forms are supported

def _broadcast_pair(a, b):
    if a.shape == b.shape:
        return None
    if a.data.size == 1:
        return "a"
    if b.data.size == 1:
        return "b"
    raise ShapeError(f"cannot broadcast {a.shape} with {b.shape} (scalar-vs-tensor only)")


def _reduce_to(g, shape):
    """Sum g down to `shape` (used for the scalar side of a broadcast)."""
    return np.sum(g).reshape(shape) if shape != g.shape else g


# ---------------------------------------------------------------------------
# arithmetic

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_pair(a, b)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accum(_reduce_to(g, b.shape))

    return _result(data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_pair(a, b)
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accum(_reduce_to(-g, b.shape))

    return _result(data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_pair(a, b)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_reduce_to(g * a.data, b.shape))

    return _result(data, (a, b), bwd)


def neg(a):
    a = _as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a._accum(-g)

    return _result(-a.data, (a,), bwd)


def exp(a):
    a = _as_tensor(a)
    data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * data)

    return _result(data, (a,), bwd)


def tanh(a):
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * (1.0 - data * data))

    return _result(data, (a,), bwd)


def relu(a):
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * (a.data > 0.0))

    return _result(data, (a,), bwd)


def square(a):
    a = _as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * 2.0 * a.data)

    return _result(a.data * a.data, (a,), bwd)


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes through where lo <= x <= hi."""
    a = _as_tensor(a)
    data = np.clip(a.data, lo, hi)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * ((a.data >= lo) & (a.data <= hi)))

    return _result(data, (a,), bwd)


def minimum(a, b):
    """Elementwise min; on ties the gradient routes to the first argument."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"minimum needs matching shapes, got {a.shape} vs {b.shape}")
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            a._accum(g * take_a)
        if b.requires_grad:
            b._accum(g * ~take_a)

    return _result(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# row-vector broadcasts (bias adds, per-dimension scales)

def add_rowvec(x, v):
    """x[..., n] + v[n]; the grad of v sums over all leading axes."""
    x, v = _as_tensor(x), _as_tensor(v)
    if x.shape[-1] != v.shape[-1] or v.ndim != 1:
        raise ShapeError(f"add_rowvec: {x.shape} vs {v.shape}")
    data = x.data + v.data

    def bwd(g):
        if x.requires_grad:
            x._accum(g)
        if v.requires_grad:
            v._accum(g.reshape(-1, v.shape[0]).sum(axis=0))

    return _result(data, (x, v), bwd)


def mul_rowvec(x, v):
    """x[..., n] * v[n] with broadcast over leading axes."""
    x, v = _as_tensor(x), _as_tensor(v)
    if x.shape[-1] != v.shape[-1] or v.ndim != 1:
        raise ShapeError(f"mul_rowvec: {x.shape} vs {v.shape}")
    data = x.data * v.data

    def bwd(g):
        if x.requires_grad:
            x._accum(g * v.data)
        if v.requires_grad:
            v._accum((g * x.data).reshape(-1, v.shape[0]).sum(axis=0))

    return _result(data, (x, v), bwd)


# ---------------------------------------------------------------------------
# matmul

def matmul(a, b):
    """Matrix product; stacked (batched) when ndim > 2, numpy semantics."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accum(_sum_to_shape(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_sum_to_shape(gb, b.shape))

    return _result(data, (a, b), bwd)


def _sum_to_shape(g, shape):
    """Collapse broadcast batch dims of a matmul gradient back to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# reductions

def tsum(a):
    a = _as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a._accum(np.broadcast_to(g, a.shape).copy())

    return _result(np.sum(a.data), (a,), bwd)


def tmean(a):
    a = _as_tensor(a)
    n = a.data.size

    def bwd(g):
        if a.requires_grad:
            a._accum(np.broadcast_to(g / n, a.shape).copy())

    return _result(np.mean(a.data), (a,), bwd)


def sum_lastdim(a):
    a = _as_tensor(a)
    data = np.sum(a.data, axis=-1)

    def bwd(g):
        if a.requires_grad:
            a._accum(np.broadcast_to(g[..., None], a.shape).copy())

    return _result(data, (a,), bwd)


# ---------------------------------------------------------------------------
# shape ops

def reshape(a, shape):
    a = _as_tensor(a)
    orig = a.shape

    def bwd(g):
        if a.requires_grad:
            a._accum(g.reshape(orig))

    return _result(a.data.reshape(shape), (a,), bwd)


def swapaxes(a, ax1, ax2):
    a = _as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a._accum(np.swapaxes(g, ax1, ax2))

    return _result(np.swapaxes(a.data, ax1, ax2).copy(), (a,), bwd)


def select_index(a, idx, axis):
    """a[..., idx, ...] along `axis` (the axis is dropped)."""
    a = _as_tensor(a)
    data = np.take(a.data, idx, axis=axis)

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            sl = [slice(None)] * a.ndim
            sl[axis] = idx
            full[tuple(sl)] = g
            a._accum(full)

    return _result(data, (a,), bwd)


# ---------------------------------------------------------------------------
# softmax / layer norm

def softmax_lastdim(x, mask=None):
    """Row softmax over the last axis, max-subtracted for stability.

    `mask` is a bool ndarray broadcastable to x.shape; False entries get
    probability exactly 0 and contribute no gradient. Fully masked rows
    yield all-zero rows (finite, consumed by nothing meaningful).
    """
    x = _as_tensor(x)
    if mask is None:
        shift = np.max(x.data, axis=-1, keepdims=True)
        e = np.exp(x.data - shift)
    else:
        mask = np.broadcast_to(mask, x.shape)
        neg = np.where(mask, x.data, -np.inf)
        shift = np.max(neg, axis=-1, keepdims=True)
        shift = np.where(np.isfinite(shift), shift, 0.0)
        e = np.where(mask, np.exp(neg - shift), 0.0)
    denom = np.sum(e, axis=-1, keepdims=True)
    out = e / np.where(denom == 0.0, 1.0, denom)

    def bwd(g):
        if x.requires_grad:
            inner = np.sum(g * out, axis=-1, keepdims=True)
            x._accum(out * (g - inner))

    return _result(out, (x,), bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then affine: gamma * xhat + beta."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},)")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    var = np.var(x.data, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gamma.data + beta.data

    def bwd(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gp = g * gamma.data
            m1 = np.mean(gp, axis=-1, keepdims=True)
            m2 = np.mean(gp * xhat, axis=-1, keepdims=True)
            x._accum((gp - m1 - xhat * m2) * inv)

    return _result(data, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# optimizer

class AdamW:
    """AdamW with decoupled weight decay applied before the moment update."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        """params: dict name -> parameter Tensor (names key optimizer state)."""
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise GradientError(
                    f"non-finite gradient in '{name}': "
                    f"nan={int(np.isnan(g).sum())} inf={int(np.isinf(g).sum())}"
                )
            if self.weight_decay != 0.0:
                p.data *= 1.0 - self.lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self):
        return {
            "step_count": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.step_count = int(state["step_count"])
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]
