"""
Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A tensor is a C-contiguous ``numpy.ndarray`` of dtype float64. Differentiable
values are wrapped in :class:`GradNode`, which records its parents together
with a vector-Jacobian closure for each. :func:`backward` walks the graph in
reverse topological order and accumulates derivatives into the ``grad`` of
every leaf that requires one.

Broadcasting is deliberately limited: binary ops accept equal shapes, or a
1-d right operand whose length matches the last axis of the left operand
(a bias or gain row).
"""
from collections.abc import Mapping
from dataclasses import dataclass
import logging
import math

import numpy as np

from .exceptions import (DegenerateAttentionError, DimensionError,
                         NonScalarRootError)

logger = logging.getLogger(__name__)

#: Logit written into masked attention positions. exp() of it underflows to
#: exactly zero after max-subtraction, so masked keys get exactly zero weight.
MASKED_LOGIT = -1e30
LAYER_NORM_EPS = 1e-5

_GELU_C = math.sqrt(2.0 / math.pi)


def as_tensor(data):
    """
    Copy ``data`` into a fresh float64 array with at least one dimension.
    """
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


class GradNode:
    """
    A value in the computation graph.

    Parameters
    ----------
    value : numpy.ndarray
        float64 array owned by the node.
    parents : sequence of (GradNode, callable)
        Each callable maps the gradient w.r.t. this node to the gradient
        contribution w.r.t. that parent.
    requires_grad : bool, optional
        Leaves that should receive gradients (parameters) set this. Interior
        nodes require a gradient exactly when one of their parents does.
    name : str, optional

    Attributes
    ----------
    grad : numpy.ndarray or None
        Accumulated derivative for leaves with ``requires_grad``; interior
        nodes keep ``None``. :func:`backward` adds into it, it never resets it.
    """
    __slots__ = ('value', 'parents', 'requires_grad', 'grad', 'name')

    __array_priority__ = 100  # make ndarray <op> GradNode defer to us

    def __init__(self, value, parents=(), requires_grad=False, name=None):
        self.value = value
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.name = name
        if requires_grad and not self.parents:
            self.grad = np.zeros_like(value)
        else:
            self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return not self.parents

    def item(self):
        if self.value.size != 1:
            raise NonScalarRootError(
                f"item() needs a single element, got shape {self.value.shape}")
        return float(self.value.reshape(-1)[0])

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ''
        return f"<GradNode{label} shape={self.value.shape}>"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("GradNode only supports division by a Python scalar")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __rmatmul__(self, other):
        return matmul(_wrap(other), self)


def constant(value, name=None):
    "A leaf that never receives a gradient."
    return GradNode(as_tensor(value), name=name)


def parameter(value, name=None):
    "A leaf that accumulates a gradient."
    return GradNode(as_tensor(value), requires_grad=True, name=name)


def _wrap(x):
    return x if isinstance(x, GradNode) else constant(x)


def _node(value, parents):
    live = [(p, fn) for p, fn in parents if p.requires_grad]
    return GradNode(value, live, requires_grad=bool(live))


def _bias_compatible(a, b, op):
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise DimensionError(
        f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to_row(g, n):
    return g.reshape(-1, n).sum(axis=0)


# --- elementwise ------------------------------------------------------------


def add(a, b):
    row = _bias_compatible(a.value, b.value, 'add')
    if row:
        n = b.value.shape[0]
        return _node(a.value + b.value,
                     [(a, lambda g: g), (b, lambda g: _reduce_to_row(g, n))])
    return _node(a.value + b.value, [(a, lambda g: g), (b, lambda g: g)])


def add_n(nodes):
    "Sum of equally shaped nodes."
    nodes = list(nodes)
    shapes = {n.shape for n in nodes}
    if len(shapes) != 1:
        raise DimensionError(f"add_n: incompatible shapes {sorted(shapes)}")
    out = nodes[0].value.copy()
    for node in nodes[1:]:
        out += node.value
    return _node(out, [(n, lambda g: g) for n in nodes])


def sub(a, b):
    row = _bias_compatible(a.value, b.value, 'sub')
    if row:
        n = b.value.shape[0]
        return _node(a.value - b.value,
                     [(a, lambda g: g), (b, lambda g: -_reduce_to_row(g, n))])
    return _node(a.value - b.value, [(a, lambda g: g), (b, lambda g: -g)])


def mul(a, b):
    av, bv = a.value, b.value
    row = _bias_compatible(av, bv, 'mul')
    if row:
        n = bv.shape[0]
        return _node(av * bv, [(a, lambda g: g * bv),
                               (b, lambda g: _reduce_to_row(g * av, n))])
    return _node(av * bv, [(a, lambda g: g * bv), (b, lambda g: g * av)])


def scale(a, c):
    c = float(c)
    return _node(a.value * c, [(a, lambda g: g * c)])


def square(a):
    av = a.value
    return _node(av * av, [(a, lambda g: 2.0 * av * g)])


def exp(a):
    out = np.exp(a.value)
    return _node(out, [(a, lambda g: g * out)])


def log(a):
    av = a.value
    return _node(np.log(av), [(a, lambda g: g / av)])


def gelu(a):
    "GELU, tanh approximation."
    x = a.value
    u = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)

    return _node(out, [(a, vjp)])


def minimum(a, b):
    if a.shape != b.shape:
        raise DimensionError(
            f"minimum: incompatible shapes {a.shape} and {b.shape}")
    take_a = a.value <= b.value
    return _node(np.where(take_a, a.value, b.value),
                 [(a, lambda g: g * take_a), (b, lambda g: g * ~take_a)])


def clip(a, lo, hi):
    inside = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), [(a, lambda g: g * inside)])


def masked_fill(a, mask, fill=MASKED_LOGIT):
    "Replace entries where ``mask == 0`` by ``fill``; they get zero gradient."
    keep = np.asarray(mask) != 0
    if keep.shape != a.shape:
        raise DimensionError(
            f"masked_fill: mask shape {keep.shape} vs value shape {a.shape}")
    return _node(np.where(keep, a.value, fill), [(a, lambda g: g * keep)])


# --- reductions and reshaping -------------------------------------------------


def sum_all(a):
    shape = a.shape
    return _node(np.array([a.value.sum()]),
                 [(a, lambda g: np.full(shape, g[0]))])


def mean(a, axis=None, keepdims=False):
    """
    Mean over all elements (result shape ``[1]``) or over one axis.
    """
    if axis is None:
        size = a.value.size
        shape = a.shape
        return _node(np.array([a.value.mean()]),
                     [(a, lambda g: np.full(shape, g[0] / size))])
    n = a.shape[axis]
    shape = a.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g / n, shape).copy()

    return _node(a.value.mean(axis=axis, keepdims=keepdims), [(a, vjp)])


def reshape(a, shape):
    old = a.shape
    return _node(a.value.reshape(shape), [(a, lambda g: g.reshape(old))])


def transpose(a):
    if a.value.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {a.shape}")
    return _node(a.value.T.copy(), [(a, lambda g: g.T)])


def concat(nodes, axis=0):
    nodes = list(nodes)
    values = [n.value for n in nodes]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError as err:
        raise DimensionError(
            f"concat: incompatible shapes {[v.shape for v in values]}") from err
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])
    parents = []
    for node, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
        index = [slice(None)] * out.ndim
        index[axis] = slice(int(lo), int(hi))
        index = tuple(index)
        parents.append((node, lambda g, index=index: g[index]))
    return _node(out, parents)


def take_rows(a, rows):
    "Gather rows of a matrix; repeated indices accumulate in the backward."
    rows = np.asarray(rows, dtype=np.intp)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, rows, g)
        return out

    return _node(a.value[rows], [(a, vjp)])


def take_cols(a, start, stop):
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return out

    return _node(a.value[:, start:stop].copy(), [(a, vjp)])


def pick(a, index):
    """
    Select ``a[i, index[i]]`` for each row ``i`` of a matrix.
    """
    index = np.asarray(index, dtype=np.intp)
    rows = np.arange(a.shape[0])
    if index.shape != (a.shape[0],):
        raise DimensionError(
            f"pick: index shape {index.shape} vs matrix shape {a.shape}")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[rows, index] = g
        return out

    return _node(a.value[rows, index], [(a, vjp)])


# --- linear algebra ---------------------------------------------------------


def matmul(a, b):
    """
    Matrix product of ``a`` [m×k] and ``b`` [k×n].

    Raises
    ------
    DimensionError
        If either operand is not a matrix or the inner dimensions differ.
    """
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(
            f"matmul: cannot multiply {av.shape} by {bv.shape}")
    return _node(av @ bv, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# --- normalizations ---------------------------------------------------------


def softmax(a, axis=-1):
    """
    Softmax along ``axis`` with max-subtraction.
    """
    x = a.value
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    s = z / z.sum(axis=axis, keepdims=True)

    def vjp(g):
        return s * (g - (g * s).sum(axis=axis, keepdims=True))

    return _node(s, [(a, vjp)])


def log_softmax(a, axis=-1):
    x = a.value
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def vjp(g):
        return g - s * g.sum(axis=axis, keepdims=True)

    return _node(out, [(a, vjp)])


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """
    Normalize the last axis to zero mean / unit variance, then apply the
    affine ``gain`` and ``bias`` rows.
    """
    xv = x.value
    d = xv.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: input {xv.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = xv.mean(axis=-1, keepdims=True)
    centered = xv - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    gv = gain.value

    def vjp_x(g):
        gx = g * gv
        return inv_std * (gx - gx.mean(axis=-1, keepdims=True)
                          - xhat * (gx * xhat).mean(axis=-1, keepdims=True))

    return _node(xhat * gv + bias.value,
                 [(x, vjp_x),
                  (gain, lambda g: _reduce_to_row(g * xhat, d)),
                  (bias, lambda g: _reduce_to_row(g, d))])


# --- attention --------------------------------------------------------------


def multi_head_attention(q, kv, mask, params, n_heads):
    """
    Multi-head scaled dot-product attention.

    Parameters
    ----------
    q : GradNode
        Queries, [Lq×d].
    kv : GradNode
        Keys/values source, [Lk×d].
    mask : array-like of {0, 1}, [Lq×Lk]
        ``mask[i, j] == 1`` lets query ``i`` attend to key ``j``.
    params : mapping
        ``wq, bq, wk, bk, wv, bv, wo, bo`` nodes.
    n_heads : int

    Returns
    -------
    GradNode
        [Lq×d]
    """
    d = q.shape[1]
    if d % n_heads:
        raise DimensionError(f"d_model {d} is not divisible by {n_heads} heads")
    if kv.shape[1] != d:
        raise DimensionError(
            f"attention: query shape {q.shape} vs key/value shape {kv.shape}")
    mask = np.asarray(mask)
    if mask.shape != (q.shape[0], kv.shape[0]):
        raise DimensionError(
            f"attention mask shape {mask.shape} vs ({q.shape[0]}, {kv.shape[0]})")
    empty = np.flatnonzero(~(mask != 0).any(axis=1))
    if empty.size:
        raise DegenerateAttentionError(
            f"query rows {empty.tolist()} have every key masked")

    head_dim = d // n_heads
    inv_sqrt = 1.0 / math.sqrt(head_dim)
    queries = linear(q, params['wq'], params['bq'])
    keys = linear(kv, params['wk'], params['bk'])
    values = linear(kv, params['wv'], params['bv'])
    heads = []
    for h in range(n_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        scores = scale(matmul(take_cols(queries, lo, hi),
                              transpose(take_cols(keys, lo, hi))), inv_sqrt)
        weights = softmax(masked_fill(scores, mask))
        heads.append(matmul(weights, take_cols(values, lo, hi)))
    merged = heads[0] if n_heads == 1 else concat(heads, axis=1)
    return linear(merged, params['wo'], params['bo'])


# --- backward ---------------------------------------------------------------


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(root):
    """
    Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``.

    Calling twice without zeroing adds the derivative twice; callers zero
    gradients (``ParamStore.zero_grad``) between updates.

    Raises
    ------
    NonScalarRootError
        If ``root`` holds more than one element.
    """
    if root.value.size != 1:
        raise NonScalarRootError(
            f"backward() needs a scalar root, got shape {root.value.shape}")
    if not root.requires_grad:
        return
    pending = {id(root): np.ones_like(root.value)}
    for node in reversed(_topological_order(root)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad += g
            continue
        for parent, vjp in node.parents:
            contribution = vjp(g)
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + contribution
            else:
                pending[key] = contribution


# --- parameters and optimization -------------------------------------------


class ParamStore(Mapping):
    """
    Named learnable parameters plus Adam moment estimates.

    Iteration is always in sorted name order.
    """
    def __init__(self):
        self._params = {}
        self._first_moment = {}
        self._second_moment = {}
        self.step = 0

    def add(self, name, value):
        if name in self._params:
            raise ValueError(f"parameter {name!r} already exists")
        node = parameter(value, name=name)
        self._params[name] = node
        self._first_moment[name] = np.zeros_like(node.value)
        self._second_moment[name] = np.zeros_like(node.value)
        return node

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self):
        return iter(sorted(self._params))

    def __len__(self):
        return len(self._params)

    def group(self, prefix):
        "Parameters under ``prefix.``, keyed by the remaining suffix."
        head = prefix + '.'
        return {name[len(head):]: self._params[name]
                for name in sorted(self._params) if name.startswith(head)}

    def num_parameters(self):
        return sum(node.value.size for node in self._params.values())

    def zero_grad(self):
        for node in self._params.values():
            node.zero_grad()

    def grad_norm(self):
        return math.sqrt(sum(float(np.sum(self._params[n].grad ** 2))
                             for n in self))

    def snapshot(self):
        return {name: self._params[name].value.copy() for name in self}

    def load(self, values):
        """
        Overwrite parameter values in place from a name → array mapping.
        """
        missing = set(self._params) - set(values)
        unexpected = set(values) - set(self._params)
        if missing or unexpected:
            raise KeyError(f"parameter names differ: missing={sorted(missing)} "
                           f"unexpected={sorted(unexpected)}")
        for name, value in values.items():
            node = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != node.value.shape:
                raise DimensionError(
                    f"{name}: stored shape {value.shape} vs {node.value.shape}")
            node.value[...] = value

    def optimizer_state(self):
        return {'step': self.step,
                'm': {n: self._first_moment[n].copy() for n in self},
                'v': {n: self._second_moment[n].copy() for n in self}}

    def load_optimizer_state(self, state):
        self.step = int(state['step'])
        for name in self:
            self._first_moment[name][...] = state['m'][name]
            self._second_moment[name][...] = state['v'][name]

    def moments(self, name):
        return self._first_moment[name], self._second_moment[name]


def clip_grad_norm(store, max_norm):
    """
    Rescale all gradients so their global L2 norm is at most ``max_norm``.

    Returns
    -------
    float
        The norm before clipping.
    """
    norm = store.grad_norm()
    if max_norm is not None and norm > max_norm:
        factor = max_norm / (norm + 1e-6)
        for name in store:
            store[name].grad *= factor
    return norm


def adam_step(store, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    One bias-corrected Adam update of every parameter in ``store``.

    Gradients are left untouched.
    """
    store.step += 1
    t = store.step
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name in store:
        node = store[name]
        m, v = store.moments(name)
        g = node.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        node.value -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


# --- finite differences -----------------------------------------------------


@dataclass(frozen=True)
class FiniteDiffReport:
    max_rel_error: float
    tol: float
    n_coords: int
    worst_name: str
    worst_index: int

    @property
    def passed(self):
        return self.max_rel_error <= self.tol


def relative_error(analytic, numeric, floor=1e-6):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(f, store, n_coords=200, h=1e-5, tol=1e-3, rng=None):
    """
    Compare backward() gradients of ``f(store)`` with central differences.

    Parameters
    ----------
    f : callable
        ``f(store) -> GradNode`` scalar; must be deterministic.
    store : ParamStore
    n_coords : int
        Number of coordinates sampled uniformly over all parameters (all of
        them when there are fewer).
    h : float
        Step, in [1e-6, 1e-4].
    tol : float
    rng : numpy.random.Generator, optional

    Returns
    -------
    FiniteDiffReport
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError(f"finite-difference step h={h} outside [1e-6, 1e-4]")
    rng = np.random.default_rng(0) if rng is None else rng
    names = list(store)
    sizes = np.array([store[n].value.size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    if n_coords >= total:
        flat = np.arange(total)
    else:
        flat = np.sort(rng.choice(total, size=n_coords, replace=False))

    store.zero_grad()
    backward(f(store))
    analytic = {n: store[n].grad.copy() for n in names}
    store.zero_grad()

    worst = (0.0, names[0] if names else '', 0)
    for index in flat:
        which = int(np.searchsorted(offsets, index, side='right') - 1)
        name = names[which]
        local = int(index - offsets[which])
        values = store[name].value.reshape(-1)
        original = values[local]
        values[local] = original + h
        up = f(store).item()
        values[local] = original - h
        down = f(store).item()
        values[local] = original
        numeric = (up - down) / (2.0 * h)
        err = relative_error(float(analytic[name].reshape(-1)[local]), numeric)
        if err > worst[0]:
            worst = (err, name, local)
    report = FiniteDiffReport(max_rel_error=worst[0], tol=tol,
                              n_coords=len(flat), worst_name=worst[1],
                              worst_index=worst[2])
    logger.debug("finite_diff_check max_rel_error=%.3e coords=%d worst=%s[%d]",
                 report.max_rel_error, report.n_coords, report.worst_name,
                 report.worst_index)
    return report
