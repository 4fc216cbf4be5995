"""Minimal reverse-mode autodiff over numpy arrays.

A `Tape` records nodes in creation order (which is already a topological
order for define-by-run graphs); `Tape.backward` walks the record in reverse
and accumulates gradients into every node that can reach a leaf.  The op set
is exactly what the models in this package need: elementwise arithmetic with
numpy broadcasting, exp/log/softplus, elementwise max/min, axis reductions
(sum, prod), row gather with scatter-add backward, reshape, softmax over the
last axis, segment sum / segment softmax over ragged batches, a fused
two-stage attention pool (`scp_pool`), plus `detach` and `straight_through`
for value/gradient splits.  There are no matmul or convolution primitives.

Arrays keep whatever float dtype they came in with: training runs float32,
`gradcheck` (in optim.py) rebuilds graphs in float64.
"""

import numpy as np

from . import kernels
from .errors import GraphError, TrainingDiverged


class Node:
    """One recorded value in the graph.  Do not construct directly; use Tape."""

    __slots__ = ("tape", "value", "grad", "need_grad", "_parents", "_bwd")

    def __init__(self, tape, value, need_grad, parents=(), bwd=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self.need_grad = need_grad
        self._parents = parents
        self._bwd = bwd
        tape._nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    # operator sugar; constants may sit on either side
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


class Tape:
    """Records a single forward graph and replays it backward."""

    def __init__(self):
        self._nodes = []

    def leaf(self, value, need_grad=True):
        """Enter an array into the graph.  Leaves with need_grad collect .grad."""
        return Node(self, np.asarray(value), need_grad)

    def constant(self, value):
        return self.leaf(value, need_grad=False)

    def backward(self, loss, free_graph=True):
        """Accumulate gradients of ``loss`` (a scalar node) into the graph.

        Raises GraphError for a non-scalar loss and TrainingDiverged when the
        loss value is not finite.  Nodes that cannot reach a grad-requiring
        leaf are skipped entirely, so unused parameters end with zero grad.

        With ``free_graph`` (the default) each intermediate node's value,
        grad, and backward closure are dropped as soon as the walk passes it;
        leaf grads and the loss value survive, but nothing else can be read
        afterwards.  Pass False to keep the graph for inspection.
        """
        if loss.tape is not self:
            raise GraphError("loss node belongs to a different tape")
        if loss.value.size != 1:
            raise GraphError(f"loss must be scalar, got shape {loss.value.shape}")
        if not np.all(np.isfinite(loss.value)):
            raise TrainingDiverged(f"non-finite loss {loss.value!r}")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self._nodes):
            if node.grad is None or node._bwd is None:
                continue
            node._bwd(node.grad)
            if free_graph:
                # every consumer has already run, so this node's arrays and
                # the input values captured by its closure are dead weight
                node._bwd = None
                node.grad = None
                if node is not loss:
                    node.value = None

    def release(self):
        """Sever every node recorded so far and forget them.

        Node/closure reference cycles otherwise keep each batch's arrays
        alive until the cyclic collector runs; training loops call this after
        the optimizer step to bound peak memory.  The tape is reusable but
        released nodes are not.
        """
        for node in self._nodes:
            node.value = None
            node.grad = None
            node._parents = ()
            node._bwd = None
        self._nodes.clear()

    def __len__(self):
        return len(self._nodes)


def _tape_of(*args):
    for a in args:
        if isinstance(a, Node):
            return a.tape
    raise GraphError("op needs at least one Node operand")


def _value(x):
    return x.value if isinstance(x, Node) else np.asarray(x)


def _accum(node, g):
    if not (isinstance(node, Node) and node.need_grad):
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, value, bwd_a, bwd_b):
    tape = _tape_of(a, b)
    need = (isinstance(a, Node) and a.need_grad) or (isinstance(b, Node) and b.need_grad)

    def bwd(g):
        if isinstance(a, Node) and a.need_grad:
            _accum(a, _unbroadcast(bwd_a(g), a.value.shape))
        if isinstance(b, Node) and b.need_grad:
            _accum(b, _unbroadcast(bwd_b(g), b.value.shape))

    return Node(tape, value, need, (a, b), bwd if need else None)


def _unary(x, value, bwd_fn):
    need = x.need_grad

    def bwd(g):
        _accum(x, bwd_fn(g))

    return Node(x.tape, value, need, (x,), bwd if need else None)


def add(a, b):
    va, vb = _value(a), _value(b)
    return _binary(a, b, va + vb, lambda g: g, lambda g: g)


def sub(a, b):
    va, vb = _value(a), _value(b)
    return _binary(a, b, va - vb, lambda g: g, lambda g: -g)


def mul(a, b):
    va, vb = _value(a), _value(b)
    return _binary(a, b, va * vb, lambda g: g * vb, lambda g: g * va)


def div(a, b):
    va, vb = _value(a), _value(b)
    out = va / vb
    return _binary(a, b, out, lambda g: g / vb, lambda g: -g * out / vb)


def exp(x):
    out = np.exp(x.value)
    return _unary(x, out, lambda g: g * out)


def log(x):
    return _unary(x, np.log(x.value), lambda g: g / x.value)


def softplus_value(x, beta=1.0):
    """Stabilized softplus on plain arrays: (1/beta) log(1 + e^(beta x)).

    Switches to the linear branch x + (1/beta) log1p(e^(-beta x)) once
    beta * x exceeds 30, where the naive form overflows.
    """
    x = np.asarray(x)
    bx = beta * x
    small = np.log1p(np.exp(np.minimum(bx, 30.0))) / beta
    large = x + np.log1p(np.exp(-np.abs(bx))) / beta
    return np.where(bx > 30.0, large, small).astype(x.dtype, copy=False)


def sigmoid_value(x):
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x, beta=1.0):
    out = softplus_value(x.value, beta)
    sig = sigmoid_value(beta * x.value)
    return _unary(x, out, lambda g: g * sig)


def maximum(a, b):
    va, vb = _value(a), _value(b)
    mask = va >= vb  # ties route the gradient to the first argument
    return _binary(a, b, np.maximum(va, vb), lambda g: g * mask, lambda g: g * ~mask)


def minimum(a, b):
    va, vb = _value(a), _value(b)
    mask = va <= vb
    return _binary(a, b, np.minimum(va, vb), lambda g: g * mask, lambda g: g * ~mask)


def sum_(x, axis=None, keepdims=False):
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, x.value.shape).astype(x.value.dtype, copy=False))

    return Node(x.tape, np.asarray(out), x.need_grad, (x,), bwd if x.need_grad else None)


def mean(x, axis=None):
    n = x.value.size if axis is None else x.value.shape[axis]
    return mul(sum_(x, axis=axis), 1.0 / n)


def prod(x, axis=-1):
    """Product along an axis.  Backward assumes no zero factors (all uses in
    this package feed softplus outputs, which are strictly positive)."""
    out = x.value.prod(axis=axis)

    def bwd(g):
        _accum(x, np.expand_dims(g * out, axis) / x.value)

    return Node(x.tape, out, x.need_grad, (x,), bwd if x.need_grad else None)


def take(x, idx):
    """Gather rows (axis 0).  Backward scatter-adds in index order."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    out = x.value[idx]

    def bwd(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        g = np.ascontiguousarray(g, dtype=x.value.dtype)
        if x.value.ndim == 1:
            np.add.at(x.grad, idx, g)
        else:
            kernels.scatter_add_rows(x.grad, idx, g.reshape(len(idx), -1))

    return Node(x.tape, out, x.need_grad, (x,), bwd if x.need_grad else None)


def reshape(x, shape):
    out = x.value.reshape(shape)
    return _unary(x, out, lambda g: g.reshape(x.value.shape))


def softmax(x, axis=-1):
    """Numerically stable softmax along ``axis`` (dense, not segmented)."""
    v = x.value
    m = v.max(axis=axis, keepdims=True)
    e = np.exp(v - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (out * g).sum(axis=axis, keepdims=True)
        _accum(x, out * (g - dot))

    return Node(x.tape, out, x.need_grad, (x,), bwd if x.need_grad else None)


def segment_sum(x, offsets):
    """Sum rows within each CSR segment; backward repeats the segment grad."""
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    out = kernels.segment_sum(x.value, offsets)

    def bwd(g):
        _accum(x, kernels.repeat_rows(np.ascontiguousarray(g), offsets))

    return Node(x.tape, out, x.need_grad, (x,), bwd if x.need_grad else None)


def segment_softmax(scores, offsets):
    """Softmax within each CSR segment of a flat score vector."""
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    out = kernels.segment_softmax(scores.value, offsets)

    def bwd(g):
        _accum(
            scores,
            kernels.segment_softmax_bwd(out, np.ascontiguousarray(g), offsets),
        )

    return Node(scores.tape, out, scores.need_grad, (scores,), bwd if scores.need_grad else None)


def scp_pool(rows, offsets, ctx):
    """Fused two-stage attention pool over CSR segments of ``rows``.

    Stage one softmaxes (rows . ctx) within each segment and pools the rows
    into a per-segment summary; stage two softmaxes (rows . summary) and
    pools again.  Forward is bitwise-identical to composing the elementwise
    and segment ops, but recorded as a single node the graph keeps only the
    two weight vectors and the summary instead of a dozen member-row-sized
    intermediates.  Backward was derived by hand; gradcheck covers it.
    """
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    q = rows.value
    cv = _value(ctx)
    s1 = (q * cv).sum(axis=1)
    alpha = kernels.segment_softmax(s1, offsets)
    b = kernels.segment_sum(q * alpha[:, None], offsets)
    s2 = (q * kernels.repeat_rows(b, offsets)).sum(axis=1)
    w = kernels.segment_softmax(s2, offsets)
    out = kernels.segment_sum(q * w[:, None], offsets)
    need_rows = rows.need_grad
    need_ctx = isinstance(ctx, Node) and ctx.need_grad

    def bwd(g):
        g = np.ascontiguousarray(g, dtype=q.dtype)
        rep_g = kernels.repeat_rows(g, offsets)
        gq = w[:, None] * rep_g
        gw = (q * rep_g).sum(axis=1)
        del rep_g
        gs2 = kernels.segment_softmax_bwd(w, gw, offsets)
        rep_b = kernels.repeat_rows(b, offsets)
        gq += gs2[:, None] * rep_b
        del rep_b
        gb = kernels.segment_sum(gs2[:, None] * q, offsets)
        rep_gb = kernels.repeat_rows(gb, offsets)
        gq += alpha[:, None] * rep_gb
        galpha = (q * rep_gb).sum(axis=1)
        del rep_gb
        gs1 = kernels.segment_softmax_bwd(alpha, galpha, offsets)
        if need_ctx:
            _accum(ctx, (gs1[:, None] * q).sum(axis=0))
        if need_rows:
            gq += gs1[:, None] * cv
            _accum(rows, gq)

    need = need_rows or need_ctx
    return Node(_tape_of(rows, ctx), out, need, (rows, ctx), bwd if need else None)


def detach(x):
    """Same value, no gradient path."""
    return Node(x.tape, x.value, False)


def straight_through(hard_value, soft):
    """Forward the ``hard_value`` array verbatim; route gradients to ``soft``.

    Equivalent to soft + detach(hard - soft) except the forward value is
    bit-exact (no float round-trip), which the serialization contract needs.
    """
    hard_value = np.asarray(hard_value)
    if hard_value.shape != soft.value.shape:
        raise GraphError("straight_through shapes differ")

    def bwd(g):
        _accum(soft, g)

    return Node(soft.tape, hard_value, soft.need_grad, (soft,), bwd if soft.need_grad else None)
