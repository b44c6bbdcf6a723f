"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and a
vector-Jacobian product.  :func:`backward` walks the graph from a scalar root
and accumulates ``d root / d node`` into ``node.grad``.  Gradients accumulate
across calls until :func:`zero_grads` is used.

Broadcasting follows numpy; gradients are summed back to the operand shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "affine",
    "elementwise",
    "reduce",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "square",
    "sqrt",
    "exp",
    "log",
    "sigmoid",
    "tanh",
    "relu",
    "identity",
    "softplus",
    "matmul",
    "tsum",
    "mean",
    "variance",
    "reshape",
    "concat",
    "stack",
    "log_softmax",
    "backward",
    "zero_grads",
    "finite_diff_check",
    "AdamState",
    "adam_step",
    "Adam",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A value that must be finite is not."""


class Tensor:
    """A node in the computation graph holding a float64 array."""

    __array_priority__ = 100.0  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, parents=(), vjp=None, op: str = "leaf",
                 copy: bool = True):
        self.data = np.array(data, dtype=np.float64, copy=copy or None)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.vjp = vjp
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
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
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __len__(self) -> int:
        return len(self.data)

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A named leaf tensor owned by a model."""

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def tensor(x) -> Tensor:
    """Wrap ``x`` as a constant tensor unless it already is one."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _node(data, parents: Sequence[Tensor], vjp, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=parents if needs else (), vjp=vjp if needs else None, op=op,
                  copy=False)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor, strict: bool) -> None:
    if strict and a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# binary arithmetic


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape("add", a, b, strict=False)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape("sub", a, b, strict=False)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape("mul", a, b, strict=False)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_shape("div", a, b, strict=False)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a) -> Tensor:
    a = tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    """Multiply by a constant (no gradient flows to ``c``)."""
    a = tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


# ---------------------------------------------------------------------------
# unary elementwise


def square(a) -> Tensor:
    a = tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqrt(a) -> Tensor:
    a = tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        # subgradient 0 at sqrt(0); keeps constant-input layer norm finite
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / np.where(out > 0, out, 1.0), 0.0)
        return (g * d,)

    return _node(out, (a,), vjp, "sqrt")


def exp(a) -> Tensor:
    a = tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a) -> Tensor:
    a = tensor(a)
    out = special.expit(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def identity(a) -> Tensor:
    return tensor(a)


def softplus(a) -> Tensor:
    a = tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _node(out, (a,), lambda g: (g * special.expit(a.data),), "softplus")


_UNARY: dict[str, Callable[[Tensor], Tensor]] = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "identity": identity,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "square": square,
    "neg": neg,
    "softplus": softplus,
}


def elementwise(kind: str, *args) -> Tensor:
    """Dispatch an elementwise op by name.

    Binary kinds (``add``, ``sub``, ``mul``, ``div``) require equal operand
    shapes here; the operator overloads allow numpy broadcasting.
    ``scale-by-constant`` takes ``(tensor, constant)``.
    """
    if kind in ("add", "sub", "mul", "div"):
        a, b = (tensor(x) for x in args)
        _broadcast_shape(kind, a, b, strict=True)
        return {"add": add, "sub": sub, "mul": mul, "div": div}[kind](a, b)
    if kind in ("scale", "scale-by-constant"):
        return scale(*args)
    try:
        fn = _UNARY[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    (a,) = args
    return fn(a)


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul: scalar operands are not allowed")
    inner_a = a.shape[-1]
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if inner_a != inner_b:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if bd.ndim == 1:
            return np.multiply.outer(g, bd), np.tensordot(g, ad, axes=(tuple(range(g.ndim)), tuple(range(ad.ndim - 1))))
        if ad.ndim == 1:
            return g @ bd.T, np.outer(ad, g)
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _node(out, (a, b), vjp, "matmul")


def transpose(a) -> Tensor:
    a = tensor(a)
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def affine(W, x, b=None) -> Tensor:
    """Summed inputs ``W x`` (plus ``b`` when given).

    ``x`` may be a single case of shape ``(D,)`` or a batch ``(N, D)``; the
    result has shape ``(H,)`` or ``(N, H)``.
    """
    W, x = tensor(W), tensor(x)
    if W.ndim != 2:
        raise ShapeError(f"affine: weight must be 2-D, got shape {W.shape}")
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(
            f"affine: weight is {W.shape[0]}x{W.shape[1]} but input has trailing dimension {x.shape[-1]}"
        )
    out = matmul(x, transpose(W))
    if b is not None:
        b = tensor(b)
        if b.shape != (W.shape[0],):
            raise ShapeError(f"affine: bias must have shape ({W.shape[0]},), got {b.shape}")
        out = add(out, b)
    return out


def reshape(a, shape) -> Tensor:
    a = tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a, index) -> Tensor:
    a = tensor(a)

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _node(a.data[index], (a,), vjp, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [tensor(t) for t in tensors]
    return _node(np.stack([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.moveaxis(g, axis, 0)), "stack")


# ---------------------------------------------------------------------------
# reductions


def _expand(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _extent(shape, axis) -> int:
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if isinstance(axis, int) else axis
    return int(np.prod([shape[ax] for ax in axes]))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims).copy(),), "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = tensor(a)
    n = _extent(a.shape, axis)
    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims) / n,), "mean")


def variance(a, axis=None, kind: str = "biased", keepdims: bool = False) -> Tensor:
    """Variance along ``axis``; ``kind`` is ``"biased"`` (divide by N) or ``"unbiased"`` (N-1)."""
    a = tensor(a)
    n = _extent(a.shape, axis)
    if kind == "biased":
        ddof = 0
    elif kind == "unbiased":
        if n < 2:
            raise ValueError("unbiased variance needs at least 2 elements along the reduced axis")
        ddof = 1
    else:
        raise ValueError(f"unknown variance kind {kind!r}")
    centered = a.data - a.data.mean(axis=axis, keepdims=True)
    out = (centered * centered).sum(axis=axis, keepdims=keepdims) / (n - ddof)
    return _node(out, (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims) * centered * (2.0 / (n - ddof)),), "variance")


def reduce(t, axis=None, kind: str = "mean", keepdims: bool = False) -> Tensor:
    """Reduce by ``kind``: ``mean``, ``variance-biased``, ``variance-unbiased`` or ``sum``."""
    if kind == "mean":
        return mean(t, axis=axis, keepdims=keepdims)
    if kind == "sum":
        return tsum(t, axis=axis, keepdims=keepdims)
    if kind in ("variance-biased", "variance-unbiased"):
        return variance(t, axis=axis, kind=kind.split("-")[1], keepdims=keepdims)
    raise ValueError(f"unknown reduction {kind!r}")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = tensor(a)
    out = special.log_softmax(a.data, axis=axis)

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), vjp, "log_softmax")


# ---------------------------------------------------------------------------
# backward pass


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate ``d root / d node`` into ``node.grad`` for every reachable node."""
    if root.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            g = np.zeros_like(node.data)
        # grads are never modified in place, so sharing arrays here is safe
        node.grad = g if node.grad is None else node.grad + g
        if node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# finite-difference oracle


def finite_diff_check(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest relative disagreement between backprop and central differences.

    ``fn`` rebuilds the scalar loss from the current contents of ``params``.
    Each coordinate is compared as ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    params = list(params)
    zero_grads(params)
    root = fn()
    if not np.isfinite(root.data).all():
        raise NonFiniteError("loss is not finite at the base point")
    backward(root)
    worst = 0.0
    for k, p in enumerate(params):
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                name = getattr(p, "name", f"param[{k}]")
                raise NonFiniteError(f"loss not finite when perturbing {name} at flat index {i}")
            numeric = (up - down) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    zero_grads(params)
    return worst


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    All gradients are validated before any parameter moves, so a rejected
    step leaves the model untouched.
    """
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError("Adam betas must lie in [0, 1)")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is not None and not np.isfinite(g).all():
            name = getattr(p, "name", f"param[{i}]")
            raise NonFiniteError(f"non-finite gradient for {name}; Adam step rejected")
    state.step += 1
    t = state.step
    step_size = lr * np.sqrt(1.0 - beta2 ** t) / (1.0 - beta1 ** t)
    eps_hat = eps * np.sqrt(1.0 - beta2 ** t)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        m = state.m.get(i)
        if m is None:
            m = state.m[i] = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        tmp = np.multiply(g, 1.0 - beta1)
        m *= beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - beta2
        v *= beta2
        v += tmp
        np.sqrt(v, out=tmp)
        tmp += eps_hat
        np.divide(m, tmp, out=tmp)
        tmp *= step_size
        p.data -= tmp
    return state


class Adam:
    """Stateful wrapper around :func:`adam_step`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state,
                  self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        zero_grads(self.params)
