"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation is a :class:`Function` subclass. Applying one
records a node on the tape (the ``_creator`` of its output) holding the input
tensors and whatever forward context its backward rule needs. Calling
:func:`backward` on a scalar walks the tape once in reverse topological order.
"""

import logging
import os

import numpy

from . import validate
from .validate import ContractError, DimensionError, EmptyReductionError, NumericError

logger = logging.getLogger(__name__)

_CHECK_FINITE = os.environ.get("NORMACT_CHECK_FINITE", "1").lower() not in (
    "0",
    "false",
    "no",
)


def set_check_finite(flag):
    """Toggle NaN/Inf checking at operation boundaries. Returns the old value."""
    global _CHECK_FINITE
    old = _CHECK_FINITE
    _CHECK_FINITE = bool(flag)
    logger.debug("finite checking %s", "on" if _CHECK_FINITE else "off")
    return old


def check_finite_enabled():
    return _CHECK_FINITE


def check_finite(array, op):
    if not _CHECK_FINITE:
        return array
    bad = ~numpy.isfinite(array)
    if bad.any():
        flat = int(numpy.flatnonzero(bad)[0])
        index = numpy.unravel_index(flat, numpy.shape(array)) if numpy.ndim(array) else ()
        raise NumericError(
            "{}: non-finite value {} at index {}".format(
                op, numpy.ravel(array)[flat], tuple(int(i) for i in index)
            )
        )
    return array


class Context(object):
    """Forward-pass state a backward rule needs."""

    def __init__(self):
        self.saved = ()

    def save_for_backward(self, *arrays):
        self.saved = arrays


class Function(object):
    """
    One node on the tape.

    Subclasses implement ``forward(ctx, *arrays, **kwargs)`` returning a numpy
    array and ``backward(ctx, grad)`` returning one gradient array (or None)
    per input tensor.

    """

    def __init__(self, *inputs):
        self.inputs = inputs
        self.ctx = Context()

    @property
    def op(self):
        return type(self).__name__

    def forward(self, ctx, *arrays, **kwargs):  # pragma: no cover
        raise NotImplementedError

    def backward(self, ctx, grad):  # pragma: no cover
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **kwargs):
        fn = cls(*inputs)
        out = fn.forward(fn.ctx, *(t.data for t in inputs), **kwargs)
        check_finite(out, fn.op)
        requires_grad = any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=requires_grad, _creator=fn if requires_grad else None)


class Tensor(object):
    """
    A dense n-dimensional array of float64 values with an optional gradient.

    Parameters
    ----------
    data : array-like
        values, copied to float64 if they are not already
    requires_grad : bool, optional (default = False)
        whether :func:`backward` should populate ``grad`` for this tensor

    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _creator=None):
        self.data = validate.is_np(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._creator = _creator

    def __repr__(self):
        return "<Tensor(shape={}, requires_grad={})>".format(
            list(self.shape), self.requires_grad
        )

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._creator is None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, scale(other, -1.0))
        return shift(self, -other)

    def __rsub__(self, other):
        return shift(scale(self, -1.0), other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return Sum.apply(self)

    def mean(self):
        return Mean.apply(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)


def tensor(data, requires_grad=False):
    return Tensor(numpy.array(data, dtype=numpy.float64), requires_grad=requires_grad)


def parameter(data):
    """A fresh leaf tensor that takes part in training."""
    return Tensor(numpy.array(data, dtype=numpy.float64), requires_grad=True)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Add(Function):
    def forward(self, ctx, a, b):
        validate.same_shape(a.shape, b.shape, "add")
        return a + b

    def backward(self, ctx, grad):
        return grad, grad


class Shift(Function):
    def forward(self, ctx, x, c=0.0):
        return x + c

    def backward(self, ctx, grad):
        return (grad,)


class BiasAdd(Function):
    """``x + b`` where ``b`` runs along one axis of ``x``."""

    def forward(self, ctx, x, b, axis=-1):
        axis = axis % x.ndim
        if b.ndim != 1 or b.shape[0] != x.shape[axis]:
            raise DimensionError(
                "bias_add: bias of shape {} does not fit axis {} of {}".format(
                    list(b.shape), axis, list(x.shape)
                )
            )
        shape = [1] * x.ndim
        shape[axis] = b.shape[0]
        ctx.axis = axis
        return x + b.reshape(shape)

    def backward(self, ctx, grad):
        others = tuple(i for i in range(grad.ndim) if i != ctx.axis)
        return grad, grad.sum(axis=others)


class ChannelScale(Function):
    """``x * g`` where ``g`` runs along one axis of ``x``."""

    def forward(self, ctx, x, g, axis=-1):
        axis = axis % x.ndim
        if g.ndim != 1 or g.shape[0] != x.shape[axis]:
            raise DimensionError(
                "channel_scale: scale of shape {} does not fit axis {} of {}".format(
                    list(g.shape), axis, list(x.shape)
                )
            )
        shape = [1] * x.ndim
        shape[axis] = g.shape[0]
        ctx.axis = axis
        ctx.save_for_backward(x, g.reshape(shape))
        return x * g.reshape(shape)

    def backward(self, ctx, grad):
        x, g = ctx.saved
        others = tuple(i for i in range(grad.ndim) if i != ctx.axis)
        return grad * g, (grad * x).sum(axis=others)


class Mul(Function):
    def forward(self, ctx, a, b):
        validate.same_shape(a.shape, b.shape, "mul")
        ctx.save_for_backward(a, b)
        return a * b

    def backward(self, ctx, grad):
        a, b = ctx.saved
        return grad * b, grad * a


class Scale(Function):
    def forward(self, ctx, x, c=1.0):
        ctx.c = float(c)
        return x * ctx.c

    def backward(self, ctx, grad):
        return (grad * ctx.c,)


class MatMul(Function):
    def forward(self, ctx, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(
                "matmul: cannot multiply {} by {}".format(list(a.shape), list(b.shape))
            )
        ctx.save_for_backward(a, b)
        return a @ b

    def backward(self, ctx, grad):
        a, b = ctx.saved
        return grad @ b.T, a.T @ grad


class Elementwise(Function):
    """Apply ``fn`` per element; backward multiplies by ``dfn(x)``.

    ``fn`` and ``dfn`` must accept and return numpy arrays elementwise.
    """

    def forward(self, ctx, x, fn=None, dfn=None):
        ctx.save_for_backward(x)
        ctx.dfn = dfn
        return numpy.asarray(fn(x), dtype=numpy.float64)

    def backward(self, ctx, grad):
        (x,) = ctx.saved
        return (grad * ctx.dfn(x),)


class Sum(Function):
    def forward(self, ctx, x):
        ctx.shape = x.shape
        return numpy.array(x.sum())

    def backward(self, ctx, grad):
        return (numpy.broadcast_to(grad, ctx.shape).copy(),)


class Mean(Function):
    def forward(self, ctx, x):
        ctx.shape = x.shape
        return numpy.array(x.mean())

    def backward(self, ctx, grad):
        n = numpy.prod(ctx.shape, dtype=numpy.int64)
        return (numpy.broadcast_to(grad / n, ctx.shape).copy(),)


class Reshape(Function):
    def forward(self, ctx, x, shape=()):
        ctx.shape = x.shape
        return x.reshape(shape)

    def backward(self, ctx, grad):
        return (grad.reshape(ctx.shape),)


class CrossEntropy(Function):
    """Mean negative log-softmax of the true class, max-shifted."""

    def forward(self, ctx, logits, labels=None):
        if logits.ndim != 2:
            raise DimensionError(
                "cross_entropy: logits must be [B x C], got {}".format(list(logits.shape))
            )
        labels = numpy.asarray(labels)
        n, c = logits.shape
        if labels.shape != (n,):
            raise DimensionError(
                "cross_entropy: {} labels for {} rows".format(labels.shape, n)
            )
        if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= c:
            raise ValueError(
                "cross_entropy: labels must be integers in [0, {})".format(c)
            )
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = numpy.log(numpy.exp(shifted).sum(axis=1))
        logp = shifted - lse[:, None]
        ctx.save_for_backward(numpy.exp(logp), labels)
        return numpy.array(-logp[numpy.arange(n), labels].mean())

    def backward(self, ctx, grad):
        probs, labels = ctx.saved
        n = probs.shape[0]
        dlogits = probs.copy()
        dlogits[numpy.arange(n), labels] -= 1.0
        return dlogits * (grad / n), None


def add(a, b):
    return Add.apply(a, b)


def shift(x, c):
    return Shift.apply(x, c=c)


def bias_add(x, b, axis=-1):
    return BiasAdd.apply(x, b, axis=axis)


def channel_scale(x, g, axis=-1):
    return ChannelScale.apply(x, g, axis=axis)


def mul(a, b):
    return Mul.apply(a, b)


def scale(x, c):
    return Scale.apply(x, c=c)


def matmul(a, b):
    """
    Matrix product of ``a`` [m x k] and ``b`` [k x n].

    Raises
    ------
    DimensionError
        if either operand is not 2-D or the inner dimensions disagree

    """
    return MatMul.apply(as_tensor(a), as_tensor(b))


def elementwise(x, fn, dfn):
    return Elementwise.apply(x, fn=fn, dfn=dfn)


def cross_entropy_loss(logits, labels):
    """
    Mean cross-entropy of ``logits`` [B x C] against integer ``labels``.

    Returns
    -------
    loss : Tensor
        scalar

    """
    return CrossEntropy.apply(logits, labels=numpy.asarray(labels))


def reduce_moments(x, mask=None):
    """
    Mean and biased variance of the unmasked elements of ``x``.

    Parameters
    ----------
    x : Tensor or array-like
    mask : Tensor or array-like of bool, optional
        ``True`` marks elements that take part

    Returns
    -------
    mean : float
    variance : float
        divide-by-count estimator
    count : int

    """
    values = x.data if isinstance(x, Tensor) else validate.is_np(x)
    if mask is not None:
        mask = numpy.asarray(mask.data if isinstance(mask, Tensor) else mask).astype(bool)
        validate.same_shape(values.shape, mask.shape, "reduce_moments")
        values = values[mask]
    count = int(values.size)
    if count == 0:
        raise EmptyReductionError("reduce_moments: no unmasked elements")
    mean = float(values.mean())
    variance = float(numpy.mean((values - mean) ** 2))
    return mean, variance, count


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in visited:
            continue
        if expanded:
            visited.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        if node._creator is not None:
            for parent in node._creator.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
    return order


def backward(loss):
    """
    Populate ``grad`` on every tensor that requires it and feeds ``loss``.

    Gradients accumulate across calls until :meth:`Tensor.zero_grad`.

    Raises
    ------
    ContractError
        if ``loss`` is not a scalar or was not produced from any tensor that
        requires a gradient

    """
    if loss.size != 1:
        raise ContractError(
            "backward needs a scalar loss, got shape {}".format(list(loss.shape))
        )
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")

    order = _topological_order(loss)
    pending = {id(loss): numpy.ones_like(loss.data)}
    for node in reversed(order):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        node.grad = grad.copy() if node.grad is None else node.grad + grad
        fn = node._creator
        if fn is None:
            continue
        grads = fn.backward(fn.ctx, grad)
        for parent, g in zip(fn.inputs, grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.shape:
                raise ContractError(
                    "{} backward produced {} for input of shape {}".format(
                        fn.op, list(g.shape), list(parent.shape)
                    )
                )
            key = id(parent)
            pending[key] = pending[key] + g if key in pending else g
