"""Small dense reverse-mode autodiff on top of numpy.

Only the operations the model needs are provided: linear layers, relu,
softmax over the last axis, (batched) matrix products, reshapes and
squared-error losses. There is no general broadcasting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NumericalError, ShapeError, StaleGraphError

DEFAULT_DTYPE = np.float64


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    if dtype is None:
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            dtype = data.dtype
        else:
            dtype = DEFAULT_DTYPE
    return np.array(data, dtype=dtype)


class Tensor:
    """A value in the computation graph.

    Leaves are either constants or :class:`Parameter` objects. Interior
    nodes keep references to their parents and a closure mapping the
    output gradient to the parents' gradients.
    """

    __array_priority__ = 1000

    def __init__(self, data, dtype=None, _parents=(), _backward=None):
        arr = _as_array(data, dtype)
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite value in tensor of shape {arr.shape}")
        self.data = arr
        self._parents = tuple(_parents)
        self._backward = _backward
        self._consumed = False

    requires_grad = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


class Parameter(Tensor):
    """Trainable leaf tensor with a gradient buffer of the same shape."""

    requires_grad = True

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def _tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _node(data, parents, backward_fn) -> Tensor:
    if any(p.requires_grad for p in parents):
        out = Tensor(data, _parents=parents, _backward=backward_fn)
        out.requires_grad = True
        return out
    return Tensor(data)


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- operations


def add(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    _check_same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    _check_same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    """Elementwise product."""
    a, b = _tensor(a), _tensor(b)
    _check_same_shape(a, b, "mul")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c: float) -> Tensor:
    a = _tensor(a)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def total(a) -> Tensor:
    """Sum of all elements, as a scalar."""
    a = _tensor(a)
    return _node(a.data.sum(), (a,), lambda g: (np.full_like(a.data, g),))


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-D tensors, or batched product of two 3-D tensors."""
    a, b = _tensor(a), _tensor(b)
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def back(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _node(a.data @ b.data, (a, b), back)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _tensor(a)
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    a = _tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(a, b) -> Tensor:
    """Concatenate two 2-D tensors along columns."""
    a, b = _tensor(a), _tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat: incompatible shapes {a.shape}, {b.shape}")
    n = a.shape[1]
    return _node(np.concatenate([a.data, b.data], axis=1), (a, b), lambda g: (g[:, :n], g[:, n:]))


def linear_forward(x, weight, bias) -> Tensor:
    """``x @ weight + bias`` for ``x`` of shape (B, I), weight (I, O), bias (O,)."""
    x, weight, bias = _tensor(x), _tensor(weight), _tensor(bias)
    if x.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise ShapeError(f"linear: bad ranks x{x.shape} W{weight.shape} b{bias.shape}")
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ShapeError(f"linear: shape mismatch x{x.shape} W{weight.shape} b{bias.shape}")

    def back(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return _node(x.data @ weight.data + bias.data, (x, weight, bias), back)


_relu_watchers: list[list] = []


def relu(x) -> Tensor:
    x = _tensor(x)
    mask = x.data > 0  # derivative at exactly 0 is 0
    for w in _relu_watchers:
        w.append(mask)
    return _node(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,))


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    x = _tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (x,), back)


def squared_l2_loss(pred, target) -> Tensor:
    """Mean over rows of the squared Euclidean distance between rows."""
    pred, target = _tensor(pred), _tensor(target)
    _check_same_shape(pred, target, "squared_l2_loss")
    if pred.data.ndim != 2:
        raise ShapeError(f"squared_l2_loss expects (B, D) inputs, got {pred.shape}")
    diff = pred.data - target.data
    n = pred.shape[0]

    def back(g):
        d = (2.0 / n) * g * diff
        return d, -d

    return _node((diff * diff).sum() / n, (pred, target), back)


# ---------------------------------------------------------------- reverse pass


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into ``param.grad`` for every reachable Parameter.

    The graph is released afterwards; calling this again on the same loss
    raises :class:`StaleGraphError`.
    """
    if loss._consumed:
        raise StaleGraphError("backward() already ran on this graph; re-run the forward pass")
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
    loss._consumed = True
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
        node._backward = None
        node._parents = ()


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------- optimisation


@dataclass
class AdamState:
    base_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState, lr: float | None = None) -> None:
    """One bias-corrected Adam update in place; gradients are zeroed afterwards."""
    lr = state.base_lr if lr is None else lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        with np.errstate(invalid="ignore", over="ignore"):
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if not np.all(np.isfinite(update)):
            raise NumericalError(f"non-finite Adam update for {p.name}")
        p.data -= update
        p.zero_grad()


def lr_schedule(base_lr: float, epoch: int, step_size: int = 5, gamma: float = 0.5) -> float:
    """Step decay: the learning rate halves every five epochs."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * gamma ** (epoch // step_size)


# ---------------------------------------------------------------- checking


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


class GradientReport(NamedTuple):
    errors: dict[str, float]
    probed: dict[str, int]
    skipped: dict[str, int]

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def _eval_with_masks(closure):
    masks: list = []
    _relu_watchers.append(masks)
    try:
        value = closure().item()
    finally:
        _relu_watchers.remove(masks)
    return value, masks


def _same_masks(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(closure, params, eps=1e-5, max_components=None, rng=None, floor=1e-8,
                    resolution_factor=1e5) -> GradientReport:
    """Compare backward() against central differences, component by component.

    ``closure`` re-runs the forward pass and returns a scalar loss tensor.
    With ``max_components`` set, larger parameters are probed at a random
    sample of that many entries. A component whose +-eps perturbation flips
    any relu mask straddles a kink, where the central difference is not a
    derivative estimate; it is skipped and another one drawn instead.

    The central difference cannot resolve gradients below roughly
    ``u * |f| / eps`` (``u`` the unit roundoff), so the relative-error
    denominator is floored at ``resolution_factor`` times that amount.
    """
    params = list(params)
    rng = np.random.default_rng(0) if rng is None else rng
    zero_grads(params)
    loss = closure()
    backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}
    zero_grads(params)
    _, base_masks = _eval_with_masks(closure)
    unit_roundoff = float(np.finfo(loss.dtype).eps) / 2

    errors, probed, skipped = {}, {}, {}
    for p in params:
        flat = p.data.reshape(-1)
        g = analytic[p.name].reshape(-1)
        want = flat.size if max_components is None else min(max_components, flat.size)
        order = rng.permutation(flat.size) if want < flat.size else np.arange(flat.size)
        worst, n_probed, n_skipped = 0.0, 0, 0
        for i in order:
            if n_probed >= want:
                break
            orig = flat[i]
            flat[i] = orig + eps
            f_plus, m_plus = _eval_with_masks(closure)
            flat[i] = orig - eps
            f_minus, m_minus = _eval_with_masks(closure)
            flat[i] = orig
            if not (_same_masks(base_masks, m_plus) and _same_masks(base_masks, m_minus)):
                n_skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * eps)
            resolution = unit_roundoff * max(abs(f_plus), abs(f_minus)) / eps
            worst = max(worst, relative_error(float(g[i]), numeric, max(floor, resolution_factor * resolution)))
            n_probed += 1
        errors[p.name], probed[p.name], skipped[p.name] = worst, n_probed, n_skipped
    return GradientReport(errors, probed, skipped)


def gradient_errors(closure, params, eps=1e-5, max_components=None, rng=None, floor=1e-8) -> dict[str, float]:
    return check_gradients(closure, params, eps, max_components, rng, floor).errors


def gradient_check(closure, params, eps=1e-5, max_components=None, rng=None, floor=1e-8) -> float:
    """Worst relative error over all probed components."""
    return check_gradients(closure, params, eps, max_components, rng, floor).max_error


def uniform_init(rng: np.random.Generator, fan_in: int, shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
