"""Reverse-mode automatic differentiation over dense float64 arrays.

This is deliberately a small tape: only the operations the recurrent
density networks in this package need.  Values are numpy arrays, a node
remembers its parents and a vjp closure, and ``backward`` runs a single
topological sweep.  Parameters are leaf nodes bound to a ParamStore; their
adjoints accumulate into the store's gradient buffers.

Not a general autodiff system on purpose: no broadcasting beyond bias
addition, no views, no higher-order derivatives.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError

__all__ = [
    "Var",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "matmul",
    "tanh",
    "sigmoid",
    "softplus",
    "exp",
    "log",
    "square",
    "vsum",
    "vmean",
    "concat_cols",
    "slice_cols",
    "tile_rows",
    "logsumexp_rows",
    "take_per_row",
    "lstm_cell",
    "backward",
]


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Var:
    """One node of the computation graph."""

    __slots__ = ("value", "parents", "vjp", "grad", "store", "name")

    def __init__(self, value, parents=(), vjp=None, store=None, name=None):
        self.value = _arr(value)
        self.parents = parents
        self.vjp = vjp
        self.grad = None
        self.store = store  # ParamStore owning this leaf, if a parameter
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" param={self.name}" if self.name else ""
        return f"Var(shape={self.value.shape}{tag})"

    # Operator sugar used sparingly by model code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(x) -> Var:
    return Var(_arr(x))


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else constant(x)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value + b.value, (a, b))
    out.vjp = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    return out


def sub(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value - b.value, (a, b))
    out.vjp = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    return out


def mul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value * b.value, (a, b))
    out.vjp = lambda g: (
        _unbroadcast(g * b.value, a.shape),
        _unbroadcast(g * a.value, b.shape),
    )
    return out


def div(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value / b.value, (a, b))

    def vjp(g):
        return (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.shape),
        )

    out.vjp = vjp
    return out


def neg(a) -> Var:
    a = _as_var(a)
    out = Var(-a.value, (a,))
    out.vjp = lambda g: (-g,)
    return out


def scale(a, c: float) -> Var:
    a = _as_var(a)
    out = Var(a.value * c, (a,))
    out.vjp = lambda g: (g * c,)
    return out


def matmul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    out = Var(a.value @ b.value, (a, b))
    out.vjp = lambda g: (g @ b.value.T, a.value.T @ g)
    return out


def tanh(a) -> Var:
    a = _as_var(a)
    t = np.tanh(a.value)
    out = Var(t, (a,))
    out.vjp = lambda g: (g * (1.0 - t * t),)
    return out


def sigmoid(a) -> Var:
    a = _as_var(a)
    s = _sigmoid_np(a.value)
    out = Var(s, (a,))
    out.vjp = lambda g: (g * s * (1.0 - s),)
    return out


def softplus(a) -> Var:
    a = _as_var(a)
    out = Var(_softplus_np(a.value), (a,))
    out.vjp = lambda g: (g * _sigmoid_np(a.value),)
    return out


def exp(a) -> Var:
    a = _as_var(a)
    e = np.exp(a.value)
    out = Var(e, (a,))
    out.vjp = lambda g: (g * e,)
    return out


def log(a) -> Var:
    a = _as_var(a)
    out = Var(np.log(a.value), (a,))
    out.vjp = lambda g: (g / a.value,)
    return out


def square(a) -> Var:
    a = _as_var(a)
    out = Var(a.value * a.value, (a,))
    out.vjp = lambda g: (2.0 * g * a.value,)
    return out


def vsum(a, axis=None) -> Var:
    a = _as_var(a)
    out = Var(a.value.sum(axis=axis), (a,))

    def vjp(g):
        if axis is None:
            return (np.full(a.shape, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    out.vjp = vjp
    return out


def vmean(a) -> Var:
    a = _as_var(a)
    n = a.value.size
    out = Var(a.value.mean(), (a,))
    out.vjp = lambda g: (np.full(a.shape, g / n),)
    return out


def concat_cols(parts) -> Var:
    parts = [_as_var(p) for p in parts]
    widths = [p.value.shape[1] for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=1), tuple(parts))
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    out.vjp = vjp
    return out


def slice_cols(a, start: int, stop: int) -> Var:
    a = _as_var(a)
    out = Var(a.value[:, start:stop], (a,))

    def vjp(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        return (full,)

    out.vjp = vjp
    return out


def tile_rows(a, n: int) -> Var:
    """Repeat a (1, D) row n times; adjoint sums the rows back."""
    a = _as_var(a)
    if a.value.shape[0] != 1:
        raise ConfigurationError(f"tile_rows expects a single row, got {a.shape}")
    out = Var(np.repeat(a.value, n, axis=0), (a,))
    out.vjp = lambda g: (g.sum(axis=0, keepdims=True),)
    return out


def logsumexp_rows(a) -> Var:
    """Row-wise log-sum-exp of a (B, K) matrix, returned as (B, 1)."""
    a = _as_var(a)
    m = a.value.max(axis=1, keepdims=True)
    e = np.exp(a.value - m)
    s = e.sum(axis=1, keepdims=True)
    out = Var(m + np.log(s), (a,))
    out.vjp = lambda g: (g * (e / s),)
    return out


def take_per_row(a, idx) -> Var:
    """Pick one column per row: out[b] = a[b, idx[b]], shape (B, 1)."""
    a = _as_var(a)
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(a.value.shape[0])
    out = Var(a.value[rows, idx][:, None], (a,))

    def vjp(g):
        full = np.zeros(a.shape)
        full[rows, idx] = g[:, 0]
        return (full,)

    out.vjp = vjp
    return out


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus_np(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x), stable on both tails
    return np.logaddexp(0.0, x)


def lstm_step_np(x, h, c, wx, wh, b):
    """Forward-only LSTM cell on plain arrays (gate order i, f, g, o)."""
    hidden = h.shape[-1]
    z = x @ wx + h @ wh + b
    i = _sigmoid_np(z[..., :hidden])
    f = _sigmoid_np(z[..., hidden : 2 * hidden])
    g = np.tanh(z[..., 2 * hidden : 3 * hidden])
    o = _sigmoid_np(z[..., 3 * hidden :])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def lstm_cell(x: Var, h: Var, c: Var, wx: Var, wh: Var, b: Var):
    """Differentiable LSTM cell, fused into a single tape node.

    Returns (h', c') as column slices of one (B, 2H) node so the analytic
    backward pass (four gemms) runs exactly once per step regardless of how
    both outputs are consumed downstream.
    """
    hidden = wh.value.shape[0]
    if x.value.shape[1] != wx.value.shape[0]:
        raise ConfigurationError(
            f"lstm input width {x.value.shape[1]} != configured {wx.value.shape[0]}"
        )
    z = x.value @ wx.value + h.value @ wh.value + b.value
    i = _sigmoid_np(z[:, :hidden])
    f = _sigmoid_np(z[:, hidden : 2 * hidden])
    g = np.tanh(z[:, 2 * hidden : 3 * hidden])
    o = _sigmoid_np(z[:, 3 * hidden :])
    c_new = f * c.value + i * g
    tc = np.tanh(c_new)
    h_new = o * tc

    hc = Var(np.concatenate([h_new, c_new], axis=1), (x, h, c, wx, wh, b))

    def vjp(grad):
        dh = grad[:, :hidden]
        dc_in = grad[:, hidden:]
        do = dh * tc
        dc = dc_in + dh * o * (1.0 - tc * tc)
        df = dc * c.value
        dc_prev = dc * f
        di = dc * g
        dg = dc * i
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        return (
            dz @ wx.value.T,
            dz @ wh.value.T,
            dc_prev,
            x.value.T @ dz,
            h.value.T @ dz,
            dz.sum(axis=0),
        )

    hc.vjp = vjp
    return slice_cols(hc, 0, hidden), slice_cols(hc, hidden, 2 * hidden)


def backward(loss: Var) -> None:
    """Reverse sweep from a scalar loss; parameter leaves accumulate into
    their ParamStore gradient buffers."""
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise ConfigurationError("backward expects a scalar loss node")

    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        if node.store is not None:
            node.store.grads[node.name] += g
        if node.vjp is not None:
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                if parent.grad is None:
                    parent.grad = pg.copy() if isinstance(pg, np.ndarray) else pg
                else:
                    parent.grad = parent.grad + pg
        node.grad = None  # free memory as we go


def grad(loss: Var) -> None:
    """Alias for :func:`backward`; populates ParamStore gradients."""
    backward(loss)
