"""Tape-style reverse-mode automatic differentiation over float64 numpy arrays.

Each primitive creates a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. Nodes receive a
monotonically increasing id at creation, so sorting the nodes reachable from
a loss by id gives a topological order. The graph is rebuilt on every forward
pass and consumed by :func:`backward`.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import kernels

__all__ = [
    "Tensor", "ShapeError", "StaleGraphError", "Graph", "AdamState",
    "tensor", "parameter", "constant", "backward", "adam_step",
    "add", "sub", "mul", "neg", "matmul", "relu", "sigmoid", "softplus",
    "exp", "log", "square", "sum", "mean", "logsumexp", "reshape",
    "transpose", "gaussian_lme", "poisson_lme",
]

_ids = itertools.count()


class ShapeError(ValueError):
    pass


class StaleGraphError(RuntimeError):
    pass


class Tensor:
    """Dense array of float64 values, optionally attached to a graph.

    Leaves created with ``requires_grad=True`` are parameters; after
    :func:`backward` their ``grad`` attribute holds the loss gradient.
    """

    __slots__ = ("value", "grad", "name", "requires_grad", "_parents",
                 "_backward", "_id", "_consumed", "__weakref__")

    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.name = name
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._id = next(_ids)
        self._consumed = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def tracked(self):
        return self.requires_grad or bool(self._parents)

    def detach(self):
        return Tensor(self.value)

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else self.value

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def tensor(value, requires_grad=False, name=None):
    return Tensor(value, requires_grad=requires_grad, name=name)


def parameter(value, name=None):
    return Tensor(value, requires_grad=True, name=name)


def constant(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(value, parents, backward_fn):
    out = Tensor(value)
    if any(p.tracked for p in parents):
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = constant(a), constant(b)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = constant(a), constant(b)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = constant(a), constant(b)
    _broadcast_check(a, b, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def neg(a):
    a = constant(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def square(a):
    a = constant(a)
    av = a.value
    return _make(av * av, (a,), lambda g: (2.0 * av * g,))


def relu(a):
    a = constant(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    """Logistic function of logits, evaluated without overflow."""
    a = constant(a)
    out = np.exp(-np.logaddexp(0.0, -a.value))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    a = constant(a)
    av = a.value
    out = np.logaddexp(0.0, av)
    return _make(out, (a,), lambda g: (g * np.exp(-np.logaddexp(0.0, -av)),))


def exp(a):
    a = constant(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("exp overflowed; route through logsumexp or softplus")
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = constant(a)
    av = a.value
    if np.any(av <= 0):
        raise ValueError(f"log of nonpositive value (min {av.min():.6g}); "
                         "use logsumexp or softplus where positivity is not guaranteed")
    return _make(np.log(av), (a,), lambda g: (g / av,))


# ---------------------------------------------------------------- linear algebra / shapes

def matmul(a, b):
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def reshape(a, shape):
    a = constant(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),))


def transpose(a):
    a = constant(a)
    return _make(a.value.T, (a,), lambda g: (g.T,))


# ---------------------------------------------------------------- reductions

def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False):
    a = constant(a)
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)
    return _make(out, (a,), lambda g: (_expand(g, shape, axis, keepdims),))


def mean(a, axis=None, keepdims=False):
    a = constant(a)
    shape = a.shape
    count = a.value.size if axis is None else shape[axis]
    out = a.value.mean(axis=axis, keepdims=keepdims)
    return _make(out, (a,), lambda g: (_expand(g, shape, axis, keepdims) / count,))


def logsumexp(a, axis=None, keepdims=False):
    """log(sum(exp(a))) via max subtraction; never overflows for finite input."""
    a = constant(a)
    av = a.value
    amax = av.max(axis=axis, keepdims=True)
    e = np.exp(av - amax)
    s = e.sum(axis=axis, keepdims=True)
    out = amax + np.log(s)
    soft = e / s
    if not keepdims:
        out = out.reshape(()) if axis is None else np.squeeze(out, axis=axis)

    def back(g):
        return (_expand(g, av.shape, axis, keepdims) * soft,)

    return _make(out, (a,), back)


# ---------------------------------------------------------------- fused likelihood ops

def gaussian_lme(x, theta, sigma):
    """Scalar ``mean_i logsumexp_j(-|x_i - theta_j|^2 / (2 sigma^2))``.

    ``x`` is data (no gradient is propagated to it); the pairwise loop runs in
    the compiled kernel when available.
    """
    x, theta = constant(x), constant(theta)
    if x.ndim != 2 or theta.ndim != 2 or x.shape[1] != theta.shape[1]:
        raise ShapeError(f"gaussian_lme: incompatible shapes {x.shape} and {theta.shape}")
    value, grad = kernels.gaussian_lme(x.value, theta.value, 1.0 / (2.0 * sigma * sigma))
    return _make(np.float64(value), (x, theta), lambda g: (None, g * grad))


def poisson_lme(x, theta):
    """Scalar ``mean_i logsumexp_j(x_i log theta_j - theta_j)`` for 1-D x and theta."""
    x, theta = constant(x), constant(theta)
    if x.value.size and (x.ndim > 2 or x.ndim == 2 and x.shape[1] != 1) or theta.ndim > 2 or (
            theta.ndim == 2 and theta.shape[1] != 1):
        raise ShapeError(f"poisson_lme: incompatible shapes {x.shape} and {theta.shape}")
    if np.any(theta.value <= 0):
        raise ValueError("poisson_lme: rates must be strictly positive")
    tshape = theta.shape
    value, grad = kernels.poisson_lme(x.value, theta.value)
    return _make(np.float64(value), (x, theta), lambda g: (None, (g * grad).reshape(tshape)))


# ---------------------------------------------------------------- backward pass

@dataclass
class Graph:
    """Operations reachable from a loss, in topological (creation) order."""

    nodes: list

    @classmethod
    def from_output(cls, out):
        seen = {id(out)}
        stack = [out]
        nodes = []
        while stack:
            t = stack.pop()
            if t._consumed:
                raise StaleGraphError("graph already consumed by backward(); run a new forward pass")
            if t._parents:
                nodes.append(t)
                for p in t._parents:
                    if id(p) not in seen:
                        seen.add(id(p))
                        stack.append(p)
            elif t.requires_grad:
                nodes.append(t)
        nodes.sort(key=lambda t: t._id)
        return cls(nodes)

    @property
    def parameters(self):
        return [t for t in self.nodes if not t._parents]


def backward(loss):
    """Propagate d loss / d parameter to every parameter leaf reachable from ``loss``.

    Sets ``grad`` on those leaves and returns ``{leaf: grad}``. The graph is
    consumed; a second call without a new forward pass raises
    :class:`StaleGraphError`.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise StaleGraphError("graph already consumed by backward(); run a new forward pass")
    if not loss.tracked:
        raise ValueError("backward: loss was not produced by a recorded graph")
    graph = Graph.from_output(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    result = {}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if not node._parents:
            grad = np.zeros_like(node.value) if g is None else np.array(g, dtype=np.float64).reshape(node.shape)
            node.grad = grad
            result[node] = grad
            continue
        if g is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.tracked:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        node._backward = None
        node._consumed = True
    return result


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    """Adam moments for an ordered list of parameters.

    Defaults follow the DCGAN-family settings (lr 2e-4, beta1 0.5).
    """

    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kwargs):
        return cls(m=[np.zeros_like(p.value) for p in params],
                   v=[np.zeros_like(p.value) for p in params], **kwargs)


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    ``grads`` is a list aligned with ``params`` (or a ``{param: grad}`` map;
    parameters missing from the map get a zero gradient).
    """
    if isinstance(grads, dict):
        grads = [grads.get(p, np.zeros_like(p.value)) for p in params]
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("adam_step: parameter, gradient and moment lists differ in length")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape} ({p.name})")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for parameter {p.name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state

