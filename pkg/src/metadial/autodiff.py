"""Define-by-run reverse-mode automatic differentiation on numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to input gradients.  Nodes carry a
global creation index; :func:`backward` visits reachable nodes in exact
reverse creation order, which is a valid reverse topological order because
a node can only be built from nodes that already exist.

Gradients accumulate additively: calling :func:`backward` twice on the same
graph doubles every ``.grad``.  Call :func:`zero_grad` between steps.
"""

from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

__all__ = [
    "Tensor", "ShapeError", "ContractError", "NonFiniteError",
    "tensor", "param", "no_grad", "is_grad_enabled", "check_finite",
    "add", "sub", "mul", "div", "neg", "matmul", "sigmoid", "tanh", "exp", "log",
    "softmax", "sum", "mean", "reshape", "swapaxes", "concat", "stack",
    "index", "embedding", "dropout", "gather", "scatter_add", "clamp_min",
    "gru_cell", "gru_sequence", "additive_attention", "backward", "zero_grad",
]


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class ContractError(RuntimeError):
    """Raised when an engine precondition is violated."""


class NonFiniteError(FloatingPointError):
    """Raised when a forward value becomes NaN or Inf under finite checking."""


_counter = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _finite_checks() -> bool:
    return getattr(_state, "check_finite", False)


@contextlib.contextmanager
def no_grad():
    """Run ops without recording a graph (inference)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def check_finite(enabled: bool = True):
    """Validate every forward result; the first non-finite value raises."""
    prev = _finite_checks()
    _state.check_finite = enabled
    try:
        yield
    finally:
        _state.check_finite = prev


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode AD."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_order", "_op")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._order = next(_counter)
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __truediv__ = lambda self, other: div(self, other)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731

    def __getitem__(self, idx):
        return index(self, idx)


def tensor(data, dtype=None) -> Tensor:
    """Constant (non-differentiable) tensor."""
    arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
    return Tensor(arr, requires_grad=False)


def param(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn, op) -> Tensor:
    if _finite_checks() and not np.all(np.isfinite(data)):
        order = next(_counter)
        raise NonFiniteError(f"non-finite output from op '{op}' (node #{order}, shape {np.shape(data)})")
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    out._op = op
    if needs:
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return _make(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); the gradient is blocked where the floor is active."""
    ad = a.data
    keep = ad > floor
    return _make(np.where(keep, ad, floor).astype(ad.dtype), (a,), lambda g: (g * keep,), "clamp_min")


def _sigmoid(x):
    # tanh form: never overflows and avoids masked indexing
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    ad = a.data
    e = np.exp(ad - ad.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


# ---------------------------------------------------------------- reductions / shape

def sum(a: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {orig} as {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(orig),), "reshape")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def concat(tensors, axis=-1) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(t.shape) for t in tensors)) from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bw, "concat")


def stack(tensors, axis=0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack: incompatible shapes " + ", ".join(str(t.shape) for t in tensors)) from None

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(out, tuple(tensors), bw, "stack")


def index(a: Tensor, idx) -> Tensor:
    """Basic or advanced indexing (slice op); gradients scatter back additively."""
    shape, dtype = a.shape, a.dtype
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in parts)

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:  # basic indexing never repeats an element
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), bw, "index")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes with numpy batch broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: dimension mismatch between {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # one flattened GEMM instead of a loop of small batched products
        a2 = ad.reshape(-1, ad.shape[-1])
        out = (a2 @ bd).reshape(*ad.shape[:-1], bd.shape[1])

        def bw(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2

        return _make(out, (a, b), bw, "matmul")
    try:
        out = ad @ bd
    except ValueError:
        raise ShapeError(f"matmul: dimension mismatch between {a.shape} and {b.shape}") from None

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------- lookups

def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    shape, dtype = weight.shape, weight.dtype
    if ids.size and (ids.min() < 0 or ids.max() >= shape[0]):
        raise ShapeError(f"embedding: ids out of range for table of shape {shape}")

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _make(weight.data[ids], (weight,), bw, "embedding")


def dropout(x: Tensor, mask=None, rate: float = 0.0) -> Tensor:
    """Inverted dropout with a caller-supplied keep mask.

    ``mask`` is 0/1 and sampled outside the graph so that repeated loss
    evaluations on one batch can share it.  ``mask=None`` (evaluation mode)
    or ``rate == 0`` is the identity.
    """
    if mask is None or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    m = np.asarray(mask, dtype=x.dtype)
    if m.shape != x.shape:
        raise ShapeError(f"dropout: mask shape {m.shape} does not match input {x.shape}")
    return mul(x, m * (1.0 / (1.0 - rate)))


def gather(a: Tensor, ids) -> Tensor:
    """Pick ``a[..., ids[...]]`` along the last axis; ``ids`` has a's leading shape."""
    ids = np.asarray(ids, dtype=np.int64)[..., None]
    shape, dtype = a.shape, a.dtype
    if ids.shape[:-1] != shape[:-1]:
        raise ShapeError(f"gather: index shape {ids.shape[:-1]} does not match leading shape {shape[:-1]}")

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        np.put_along_axis(full, ids, g[..., None], axis=-1)
        return (full,)

    return _make(np.take_along_axis(a.data, ids, axis=-1)[..., 0], (a,), bw, "gather")


def scatter_add(src: Tensor, ids, size: int) -> Tensor:
    """Sum ``src[..., j]`` into slot ``ids[..., j]`` of a new last axis of ``size``.

    This realises sums of the form sum over j with token_j == v, for every v.
    """
    ids = np.broadcast_to(np.asarray(ids, dtype=np.int64), src.shape)
    lead = src.shape[:-1]
    n = int(np.prod(lead)) if lead else 1
    flat_ids = ids.reshape(n, -1) + (np.arange(n) * size)[:, None]
    out = np.bincount(flat_ids.reshape(-1), weights=src.data.reshape(-1), minlength=n * size)
    out = out.astype(src.dtype).reshape(*lead, size)

    def bw(g):
        return (np.take_along_axis(g, ids, axis=-1),)

    return _make(out, (src,), bw, "scatter_add")


# ---------------------------------------------------------------- fused GRU

def gru_cell(x: Tensor, h: Tensor, w_x: Tensor, w_h: Tensor, b_x: Tensor, b_h: Tensor, step_mask=None) -> Tensor:
    """One GRU step, gates ordered (reset, update, candidate).

        r = sig(x Wx_r + bx_r + h Wh_r + bh_r)
        z = sig(x Wx_z + bx_z + h Wh_z + bh_z)
        n = tanh(x Wx_n + bx_n + r * (h Wh_n + bh_n))
        h' = (1 - z) * n + z * h

    ``step_mask`` (B x 1, constant) keeps ``h`` where it is 0, so padded steps
    carry the state through unchanged.
    """
    hidden = h.shape[-1]
    if x.shape[-1] != w_x.shape[0] or w_x.shape[1] != 3 * hidden or w_h.shape != (hidden, 3 * hidden):
        raise ShapeError(f"gru_cell: x {x.shape}, h {h.shape}, Wx {w_x.shape}, Wh {w_h.shape}")
    xd, hd = x.data, h.data
    gx = xd @ w_x.data + b_x.data
    gh = hd @ w_h.data + b_h.data
    r = _sigmoid(gx[:, :hidden] + gh[:, :hidden])
    z = _sigmoid(gx[:, hidden:2 * hidden] + gh[:, hidden:2 * hidden])
    hn = gh[:, 2 * hidden:]
    n = np.tanh(gx[:, 2 * hidden:] + r * hn)
    out = (1.0 - z) * n + z * hd
    m = None
    if step_mask is not None:
        m = np.asarray(step_mask, dtype=hd.dtype).reshape(-1, 1)
        out = m * out + (1.0 - m) * hd

    def bw(g):
        g_carry = 0.0
        if m is not None:
            g_carry = g * (1.0 - m)
            g = g * m
        dn = g * (1.0 - z)
        dz = g * (hd - n)
        dh = g * z + g_carry
        dn_pre = dn * (1.0 - n * n)
        dr = dn_pre * hn
        dr_pre = dr * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dgx = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        dx = dgx @ w_x.data.T
        dh = dh + dgh @ w_h.data.T
        return dx, dh, xd.T @ dgx, hd.T @ dgh, dgx.sum(axis=0), dgh.sum(axis=0)

    return _make(out, (x, h, w_x, w_h, b_x, b_h), bw, "gru_cell")


def gru_sequence(x: Tensor, h0: Tensor, w_x: Tensor, w_h: Tensor, b_x: Tensor, b_h: Tensor, step_mask=None) -> Tensor:
    """Run :func:`gru_cell` over every step of ``x`` (B x T x D) as one node; returns B x T x H.

    ``step_mask`` (B x T, constant) carries the state through padded steps.
    The input projections of all steps are one matrix product, and the
    backward pass runs backpropagation through time inside the node.
    """
    b, t_len, d = x.shape
    hidden = h0.shape[-1]
    if d != w_x.shape[0] or w_x.shape[1] != 3 * hidden or w_h.shape != (hidden, 3 * hidden):
        raise ShapeError(f"gru_sequence: x {x.shape}, h {h0.shape}, Wx {w_x.shape}, Wh {w_h.shape}")
    dtype = h0.dtype
    mask = np.ones((b, t_len), dtype=dtype) if step_mask is None else np.asarray(step_mask, dtype=dtype)
    gx = (x.data.reshape(-1, d) @ w_x.data + b_x.data).reshape(b, t_len, 3 * hidden)
    wh = w_h.data
    prev = np.empty((b, t_len, hidden), dtype=dtype)
    out = np.empty((b, t_len, hidden), dtype=dtype)
    rs, zs, ns, hns = (np.empty((b, t_len, hidden), dtype=dtype) for _ in range(4))
    h = h0.data
    for t in range(t_len):
        gh = h @ wh + b_h.data
        g_t = gx[:, t]
        r = _sigmoid(g_t[:, :hidden] + gh[:, :hidden])
        z = _sigmoid(g_t[:, hidden:2 * hidden] + gh[:, hidden:2 * hidden])
        hn = gh[:, 2 * hidden:]
        n = np.tanh(g_t[:, 2 * hidden:] + r * hn)
        m = mask[:, t:t + 1]
        new = m * ((1.0 - z) * n + z * h) + (1.0 - m) * h
        prev[:, t], rs[:, t], zs[:, t], ns[:, t], hns[:, t] = h, r, z, n, hn
        out[:, t] = new
        h = new

    def bw(g):
        dgx = np.empty((b, t_len, 3 * hidden), dtype=dtype)
        dgh = np.empty((b, t_len, 3 * hidden), dtype=dtype)
        carry = np.zeros((b, hidden), dtype=dtype)
        for t in range(t_len - 1, -1, -1):
            gt = g[:, t] + carry
            m = mask[:, t:t + 1]
            r, z, n = rs[:, t], zs[:, t], ns[:, t]
            g_keep = gt * (1.0 - m)
            gt = gt * m
            dn_pre = gt * (1.0 - z) * (1.0 - n * n)
            dz_pre = gt * (prev[:, t] - n) * z * (1.0 - z)
            dr_pre = dn_pre * hns[:, t] * r * (1.0 - r)
            dgx[:, t, :hidden] = dr_pre
            dgx[:, t, hidden:2 * hidden] = dz_pre
            dgx[:, t, 2 * hidden:] = dn_pre
            dgh[:, t, :2 * hidden] = dgx[:, t, :2 * hidden]
            dgh[:, t, 2 * hidden:] = dn_pre * r
            carry = gt * z + g_keep + dgh[:, t] @ wh.T
        dgx2 = dgx.reshape(-1, 3 * hidden)
        dgh2 = dgh.reshape(-1, 3 * hidden)
        dx = (dgx2 @ w_x.data.T).reshape(x.shape)
        return (dx, carry, x.data.reshape(-1, d).T @ dgx2, prev.reshape(-1, hidden).T @ dgh2,
                dgx2.sum(axis=0), dgh2.sum(axis=0))

    return _make(out, (x, h0, w_x, w_h, b_x, b_h), bw, "gru_sequence")


def additive_attention(keys: Tensor, s: Tensor, w_s: Tensor, v: Tensor, values: Tensor, neg_mask=None) -> Tensor:
    """Context vector of additive attention as one node.

        e = tanh(keys + s W_s),  a = softmax(e v + neg_mask),  ctx = sum_t a_t values_t

    ``keys`` is B x T x A (already projected), ``s`` is B x H, ``w_s`` H x A,
    ``v`` A x 1 and ``values`` B x T x H.  ``neg_mask`` (B x T, constant) is
    added to the scores, e.g. a large negative number on padding.
    """
    b, t_len, a_dim = keys.shape
    if s.shape[-1] != w_s.shape[0] or w_s.shape[1] != a_dim or v.shape != (a_dim, 1) or values.shape[:2] != (b, t_len):
        raise ShapeError(f"additive_attention: keys {keys.shape}, s {s.shape}, Ws {w_s.shape}, "
                         f"v {v.shape}, values {values.shape}")
    q = s.data @ w_s.data
    e = np.tanh(keys.data + q[:, None, :])
    score = (e.reshape(-1, a_dim) @ v.data).reshape(b, t_len)
    if neg_mask is not None:
        score = score + neg_mask
    score = score - score.max(axis=1, keepdims=True)
    w = np.exp(score)
    w /= w.sum(axis=1, keepdims=True)
    vals = values.data
    ctx = (w[:, None, :] @ vals)[:, 0]

    def bw(g):
        ga = (vals @ g[:, :, None])[:, :, 0]
        g_values = w[:, :, None] * g[:, None, :]
        g_score = w * (ga - (ga * w).sum(axis=1, keepdims=True))
        g_e = g_score[:, :, None] * v.data[:, 0]
        g_pre = g_e * (1.0 - e * e)
        g_v = (e.reshape(-1, a_dim).T @ g_score.reshape(-1))[:, None]
        g_q = g_pre.sum(axis=1)
        return g_pre, g_q @ w_s.data.T, s.data.T @ g_q, g_v, g_values

    return _make(ctx, (keys, s, w_s, v, values), bw, "additive_attention")


# ---------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor that requires grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward() on a tensor that does not require grad")
    nodes, seen, todo = [], {id(loss)}, [loss]
    while todo:
        node = todo.pop()
        nodes.append(node)
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                todo.append(p)
    nodes.sort(key=lambda t: t._order, reverse=True)
    grads = {id(loss): np.ones_like(loss.data)}
    owned = set()  # ids whose buffer was allocated here and may be updated in place
    for node in nodes:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in owned:
                grads[key] += pg
            elif key in grads:
                grads[key] = grads[key] + pg
                owned.add(key)
            else:
                grads[key] = pg


def zero_grad(params) -> None:
    for p in (params.values() if isinstance(params, dict) else params):
        p.grad = None
