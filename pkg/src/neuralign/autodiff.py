"""Reverse-mode differentiation over an explicitly recorded computation graph.

Every operation is a module-level function that returns a new ``Node`` holding
the forward value (a C-order float64 array), the parent nodes, and one
vector-Jacobian callback per parent. ``forward_backward`` walks the recorded
DAG once in reverse topological order and writes parameter gradients into the
owning ``ParamStore``. Nothing is mutated during the walk, so a graph can be
replayed or differentiated repeatedly.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

Array = np.ndarray


def as_tensor(x) -> Array:
    """Coerce to the package-wide tensor layout: C-order float64 ndarray.

    ascontiguousarray alone would uprank 0-d arrays to (1,); scalars must
    stay 0-d so loss values are true scalars.
    """
    arr = np.asarray(x, dtype=np.float64)
    return arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)


class Node:
    """One recorded value. ``parents`` and ``vjps`` are parallel tuples."""

    __slots__ = ("value", "parents", "vjps", "param")

    def __init__(self, value, parents=(), vjps=(), param=None):
        self.value = as_tensor(value)
        self.parents: tuple[Node, ...] = tuple(parents)
        self.vjps: tuple[Callable[[Array], Array], ...] = tuple(vjps)
        self.param = param  # (ParamStore, name) on parameter leaves

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    # Arithmetic sugar only; the graph is still the explicit Node DAG built
    # by the functions below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        kind = "param" if self.param else ("leaf" if not self.parents else "op")
        return f"Node(shape={self.shape}, {kind})"


def constant(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a, b, fwd, vjp_a, vjp_b, opname: str) -> Node:
    a, b = constant(a), constant(b)
    try:
        value = fwd(a.value, b.value)
    except ValueError as exc:
        raise ShapeError(
            f"{opname}: operand shapes {a.shape} and {b.shape} are incompatible"
        ) from exc
    return Node(
        value,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(vjp_a(g, a.value, b.value), a.shape),
            lambda g: _unbroadcast(vjp_b(g, a.value, b.value), b.shape),
        ),
    )


def add(a, b) -> Node:
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b) -> Node:
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b) -> Node:
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def div(a, b) -> Node:
    return _binary(
        a, b, np.divide,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
        "div",
    )


def neg(a) -> Node:
    a = constant(a)
    return Node(-a.value, (a,), (lambda g: -g,))


def matmul(a, b) -> Node:
    a, b = constant(a), constant(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul: operands must have rank >= 2, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner extents differ, operands {a.shape} and {b.shape}"
        )

    def vjp_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.shape)

    def vjp_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.shape)

    return Node(np.matmul(a.value, b.value), (a, b), (vjp_a, vjp_b))


def _einsum_grad_spec(out_sub: str, other_sub: str, own_sub: str) -> str:
    return f"{out_sub},{other_sub}->{own_sub}"


def einsum2(subscripts: str, a, b) -> Node:
    """Two-operand einsum. Each operand's indices must appear in the output
    or in the other operand, and may not repeat within one operand."""
    a, b = constant(a), constant(b)
    ins, out_sub = subscripts.replace(" ", "").split("->")
    a_sub, b_sub = ins.split(",")
    for own, other, name in ((a_sub, b_sub, "first"), (b_sub, a_sub, "second")):
        if len(set(own)) != len(own):
            raise ShapeError(f"einsum2 {subscripts!r}: repeated index in {name} operand")
        if not set(own) <= set(out_sub) | set(other):
            raise ShapeError(f"einsum2 {subscripts!r}: {name} operand has an index "
                             "missing from both output and other operand")
    value = np.einsum(subscripts, a.value, b.value)

    def vjp_a(g):
        return np.einsum(_einsum_grad_spec(out_sub, b_sub, a_sub), g, b.value)

    def vjp_b(g):
        return np.einsum(_einsum_grad_spec(out_sub, a_sub, b_sub), g, a.value)

    return Node(value, (a, b), (vjp_a, vjp_b))


def power(a, exponent: float) -> Node:
    a = constant(a)
    e = float(exponent)
    return Node(a.value ** e, (a,), (lambda g: g * e * a.value ** (e - 1.0),))


def square(a) -> Node:
    a = constant(a)
    return Node(a.value * a.value, (a,), (lambda g: g * 2.0 * a.value,))


def sqrt(a) -> Node:
    a = constant(a)
    root = np.sqrt(a.value)
    return Node(root, (a,), (lambda g: g * 0.5 / root,))


def exp(a) -> Node:
    a = constant(a)
    value = np.exp(a.value)
    return Node(value, (a,), (lambda g: g * value,))


def log(a) -> Node:
    a = constant(a)
    return Node(np.log(a.value), (a,), (lambda g: g / a.value,))


def tanh(a) -> Node:
    a = constant(a)
    value = np.tanh(a.value)
    return Node(value, (a,), (lambda g: g * (1.0 - value * value),))


def _axis_tuple(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(x % ndim for x in axis)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Node:
    a = constant(a)
    axes = _axis_tuple(axis, a.ndim)
    value = a.value.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, a.shape)

    return Node(value, (a,), (vjp,))


def reduce_mean(a, axis=None, keepdims: bool = False) -> Node:
    a = constant(a)
    axes = _axis_tuple(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if a.ndim else 1
    total = reduce_sum(a, axis=axes, keepdims=keepdims)
    return mul(total, 1.0 / count)


def softmax(a, axis: int = -1) -> Node:
    a = constant(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * value).sum(axis=axis, keepdims=True)
        return value * (g - inner)

    return Node(value, (a,), (vjp,))


def logsumexp(a, axis: int = -1) -> Node:
    a = constant(a)
    m = a.value.max(axis=axis, keepdims=True)
    e = np.exp(a.value - m)
    s = e.sum(axis=axis, keepdims=True)
    value = np.squeeze(m + np.log(s), axis=axis)
    soft = e / s

    def vjp(g):
        return np.expand_dims(g, axis % a.ndim) * soft

    return Node(value, (a,), (vjp,))


def stop_gradient(a) -> Node:
    """Forward identity; the recorded graph ends here, so no gradient flows."""
    a = constant(a)
    return Node(a.value.copy())


def take(a, index) -> Node:
    """Basic or advanced indexing. Gradient scatter-adds into the source."""
    a = constant(a)
    value = a.value[index]

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return out

    return Node(value, (a,), (vjp,))


def reshape(a, shape) -> Node:
    a = constant(a)
    return Node(a.value.reshape(shape), (a,), (lambda g: g.reshape(a.shape),))


def transpose(a, axes=None) -> Node:
    a = constant(a)
    perm = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(perm))
    return Node(a.value.transpose(perm), (a,), (lambda g: g.transpose(inverse),))


def stack(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [constant(n) for n in nodes]
    value = np.stack([n.value for n in nodes], axis=axis)
    vjps = tuple(
        (lambda g, i=i: np.take(g, i, axis=axis)) for i in range(len(nodes))
    )
    return Node(value, tuple(nodes), vjps)


def concat(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [constant(n) for n in nodes]
    value = np.concatenate([n.value for n in nodes], axis=axis)
    offsets = np.cumsum([0] + [n.shape[axis % n.ndim] for n in nodes])
    ax = axis % nodes[0].ndim

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(lo, hi)
            return g[tuple(sl)]

        return vjp

    return Node(value, tuple(nodes), tuple(make_vjp(i) for i in range(len(nodes))))


def shift_time(a, steps: int, axis: int = -2) -> Node:
    """Shift forward along ``axis`` by ``steps``, zero-filling the start.
    Output index t holds input index t - steps."""
    a = constant(a)
    if steps == 0:
        return a
    if steps < 0:
        raise ShapeError(f"shift_time: steps must be >= 0, got {steps}")
    ax = axis % a.ndim
    n = a.shape[ax]
    value = np.zeros_like(a.value)
    dst = [slice(None)] * a.ndim
    src = [slice(None)] * a.ndim
    dst[ax] = slice(steps, None)
    src[ax] = slice(0, max(n - steps, 0))
    value[tuple(dst)] = a.value[tuple(src)]

    def vjp(g):
        out = np.zeros_like(g)
        out[tuple(src)] = g[tuple(dst)]
        return out

    return Node(value, (a,), (vjp,))


def l2_normalize(a, axis: int = -1, eps: float = 1e-8) -> Node:
    """Rows scaled to unit length, guarded by ``eps`` for zero rows."""
    a = constant(a)
    norm = sqrt(reduce_sum(square(a), axis=axis, keepdims=True))
    return div(a, add(norm, eps))


def cosine_similarity(a, b, eps: float = 1e-8) -> float:
    """Cosine of the angle between two equal-length vectors, clamped to [-1, 1]."""
    a = as_tensor(a).reshape(-1)
    b = as_tensor(b).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ShapeError("cosine_similarity: zero-length operand")
    if a.shape != b.shape:
        raise ShapeError(
            f"cosine_similarity: operand lengths differ, {a.shape} and {b.shape}"
        )
    # scale is cosine-invariant; dividing by the peak magnitude keeps the
    # dot product finite for inputs near the float64 overflow threshold
    scale_a, scale_b = np.abs(a).max(), np.abs(b).max()
    if scale_a > 0:
        a = a / scale_a
    if scale_b > 0:
        b = b / scale_b
    num = float(a @ b)
    den = float(np.linalg.norm(a) * np.linalg.norm(b)) + eps
    return float(np.clip(num / den, -1.0, 1.0))


class ParamStore:
    """Named parameter tensors with parallel gradient slots."""

    def __init__(self):
        self._params: dict[str, Array] = {}
        self._grads: dict[str, Array] = {}

    def add(self, name: str, value) -> None:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already present")
        v = as_tensor(value)
        self._params[name] = v
        self._grads[name] = np.zeros_like(v)

    def names(self) -> list[str]:
        return sorted(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def value(self, name: str) -> Array:
        return self._params[name]

    def set_value(self, name: str, value) -> None:
        v = as_tensor(value)
        if v.shape != self._params[name].shape:
            raise ShapeError(
                f"set_value {name!r}: shape {v.shape} does not match {self._params[name].shape}"
            )
        self._params[name] = v

    def grad(self, name: str) -> Array:
        return self._grads[name]

    def leaf(self, name: str) -> Node:
        """A fresh graph leaf for the parameter's current value."""
        return Node(self._params[name], param=(self, name))

    def zero_grads(self) -> None:
        for name, v in self._params.items():
            self._grads[name] = np.zeros_like(v)


def _topo_order(root: Node) -> list[Node]:
    """Parents-before-children post-order; iterative to spare the stack."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            stack.append((parent, False))
    return order


def backward(loss: Node) -> dict[int, Array]:
    """Gradients of a scalar ``loss`` with respect to every reachable node,
    keyed by ``id(node)``. The graph itself is left untouched."""
    if loss.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    grads: dict[int, Array] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contribution = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = contribution
    return grads


def forward_backward(loss: Node, store: ParamStore) -> float:
    """Evaluate a recorded scalar graph and write d(loss)/d(param) into the
    gradient slots of ``store`` (slots are reset first)."""
    store.zero_grads()
    grads = backward(loss)
    for node in _topo_order(loss):
        if node.param is None:
            continue
        owner, name = node.param
        g = grads.get(id(node))
        if g is not None:
            owner._grads[name] = owner._grads[name] + g
    return float(loss.value)


def finite_difference_grad(
    build_loss: Callable[[], Node], store: ParamStore, name: str, step: float = 1e-5
) -> Array:
    """Central-difference gradient of ``build_loss()`` w.r.t. one parameter."""
    base = store.value(name).copy()
    out = np.zeros_like(base)
    flat = out.reshape(-1)
    for i in range(base.size):
        perturbed = base.copy().reshape(-1)
        perturbed[i] = base.reshape(-1)[i] + step
        store.set_value(name, perturbed.reshape(base.shape))
        hi = build_loss().item()
        perturbed[i] = base.reshape(-1)[i] - step
        store.set_value(name, perturbed.reshape(base.shape))
        lo = build_loss().item()
        flat[i] = (hi - lo) / (2.0 * step)
    store.set_value(name, base)
    return out


def max_relative_error(analytic: Array, numeric: Array) -> float:
    """max |a - n| / max(|a|, |n|, 1), the unit-floored relative error."""
    a = as_tensor(analytic)
    n = as_tensor(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(
    build_loss: Callable[[], Node],
    store: ParamStore,
    names: Iterable[str] | None = None,
    step: float = 1e-5,
) -> float:
    """Run forward_backward and compare every named parameter's gradient with
    central differences; returns the worst relative error."""
    loss = build_loss()
    forward_backward(loss, store)
    analytic = {name: store.grad(name).copy() for name in (names or store.names())}
    worst = 0.0
    for name, g in analytic.items():
        fd = finite_difference_grad(build_loss, store, name, step=step)
        worst = max(worst, max_relative_error(g, fd))
    return worst
