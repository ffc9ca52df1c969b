"""Dense tensors and reverse-mode automatic differentiation.

A ``Tensor`` wraps a float32 or float64 numpy array. Operations performed
while a ``Tape`` is active append one node per op, in creation order, so
creation order doubles as a topological order. ``backward`` walks the node
list once in reverse and accumulates gradients into ``.grad``; calling it
again on another tape accumulates on top of whatever is already there.

Convolution and pooling live in ``convops``; they record onto the same tape
through :func:`op_output`.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

_ALLOWED_DTYPES = (np.float32, np.float64)

# Finite checking is opt-in because it costs a full pass over every
# intermediate. grad_check enables it; training leaves it off and relies on
# the loss-level finite check.
_finite_checks_enabled = False


def set_finite_checks(enabled: bool) -> None:
    global _finite_checks_enabled
    _finite_checks_enabled = bool(enabled)


def finite_checks_enabled() -> bool:
    return _finite_checks_enabled


class Tensor:
    """N-d array plus gradient slot. Data is float32 or float64, never mixed."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Arithmetic sugar. Scalars are promoted to constant tensors of the same
    # dtype so the mixed-precision check only fires on real tensor mixing.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __neg__(self):
        return neg(self)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Records ops while active (``with Tape() as t:``). Nestable; the
    innermost tape records."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack.pop()
        if popped is not self:
            raise ConfigError("tape stack corrupted: exited a tape that is not innermost")
        return False


_tape_stack: list[Tape] = []


def _active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def op_output(op: str, inputs, out_data: np.ndarray, backward_fn) -> Tensor:
    """Wrap an op result, optionally recording it on the active tape.

    ``backward_fn(grad)`` must return one array (or None) per input, in
    input order. Recording happens only when a tape is active and at least
    one input requires grad.
    """
    if _finite_checks_enabled and not np.all(np.isfinite(out_data)):
        raise NumericError(f"non-finite values produced by op '{op}'")
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.nodes.append(_Node(op, tuple(inputs), out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` for every recorded tensor.

    Visits each node exactly once, in reverse creation order. Gradients add
    onto existing ``.grad`` contents, so repeated calls accumulate.
    """
    if loss.data.size != 1:
        raise ConfigError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        grad = pending.pop(id(node.output), None)
        holders.pop(id(node.output), None)
        if grad is None:
            continue  # node does not feed the loss
        node.output.grad = grad if node.output.grad is None else node.output.grad + grad
        input_grads = node.backward_fn(grad)
        for tensor, contrib in zip(node.inputs, input_grads):
            if contrib is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in pending:
                pending[key] = pending[key] + contrib
            else:
                pending[key] = contrib
                holders[key] = tensor
    # Whatever is left belongs to leaves (tensors produced by no recorded op).
    for key, tensor in holders.items():
        grad = pending[key]
        tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


def _check_dtypes(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ConfigError(
            f"{op}: mixed precision is not allowed "
            f"({a.data.dtype.name} vs {b.data.dtype.name})"
        )


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce a broadcasted gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(op: str, a: Tensor, b: Tensor, forward, da, db) -> Tensor:
    _check_dtypes(op, a, b)
    try:
        out = forward(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast") from exc

    def backward_fn(grad):
        ga = _unbroadcast(da(grad, a.data, b.data), a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(db(grad, a.data, b.data), b.data.shape) if b.requires_grad else None
        return ga, gb

    return op_output(op, (a, b), out, backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a: Tensor, b: Tensor) -> Tensor:
    return _binary(
        "div", a, b, np.divide,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def neg(x: Tensor) -> Tensor:
    return op_output("neg", (x,), -x.data, lambda g: (-g,))


def pow_scalar(x: Tensor, exponent: float) -> Tensor:
    """x ** p for a Python scalar p. p == 0 returns exact ones with zero
    gradient, so downstream identities that rely on t**0 == 1 hold bitwise."""
    p = float(exponent)
    if p == 0.0:
        out = np.ones_like(x.data)
        return op_output("pow", (x,), out, lambda g: (np.zeros_like(x.data),))
    out = x.data ** p

    def backward_fn(grad):
        return (grad * p * x.data ** (p - 1.0),)

    return op_output("pow", (x,), out, backward_fn)


def log(x: Tensor) -> Tensor:
    return op_output("log", (x,), np.log(x.data), lambda g: (g / x.data,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]. Gradient passes where the input was inside the range."""
    if not lo < hi:
        raise ConfigError(f"clamp: lo must be < hi, got [{lo}, {hi}]")
    out = np.clip(x.data, lo, hi)
    inside = ((x.data >= lo) & (x.data <= hi)).astype(x.data.dtype)
    return op_output("clamp", (x,), out, lambda g: (g * inside,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return op_output("relu", (x,), np.where(mask, x.data, 0), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign so exp never overflows.
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)

    def backward_fn(grad):
        return (grad * out * (1.0 - out),)

    return op_output("sigmoid", (x,), out, backward_fn)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "identity" or kind is None:
        return x
    raise ConfigError(f"unknown activation '{kind}'")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ConfigError("concat needs at least one tensor")
    first = tensors[0]
    for t in tensors[1:]:
        _check_dtypes("concat", first, t)
        if t.data.ndim != first.data.ndim:
            raise DimensionError("concat: rank mismatch")
        for ax in range(first.data.ndim):
            if ax != axis and t.data.shape[ax] != first.data.shape[ax]:
                raise DimensionError(
                    f"concat: shapes {first.data.shape} and {t.data.shape} "
                    f"differ outside axis {axis}"
                )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward_fn(grad):
        pieces = []
        slicer = [slice(None)] * grad.ndim
        for i in range(len(sizes)):
            slicer[axis] = slice(bounds[i], bounds[i + 1])
            pieces.append(grad[tuple(slicer)])
        return tuple(pieces)

    return op_output("concat", tuple(tensors), out, backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.data.shape} as {shape}") from exc
    original = x.data.shape
    return op_output("reshape", (x,), out, lambda g: (g.reshape(original),))


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x @ weight.T + bias for x of shape (N, F), weight (O, F), bias (O)."""
    _check_dtypes("dense", x, weight)
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise DimensionError("dense expects 2-d input and weight")
    if x.data.shape[1] != weight.data.shape[1]:
        raise DimensionError(
            f"dense: input features {x.data.shape[1]} != weight features {weight.data.shape[1]}"
        )
    out = x.data @ weight.data.T
    inputs = [x, weight]
    if bias is not None:
        _check_dtypes("dense", x, bias)
        if bias.data.shape != (weight.data.shape[0],):
            raise DimensionError("dense: bias shape must be (out_features,)")
        out = out + bias.data
        inputs.append(bias)

    def backward_fn(grad):
        gx = grad @ weight.data if x.requires_grad else None
        gw = grad.T @ x.data if weight.requires_grad else None
        if bias is not None:
            gb = grad.sum(axis=0) if bias.requires_grad else None
            return gx, gw, gb
        return gx, gw

    return op_output("dense", tuple(inputs), out, backward_fn)


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward_fn(grad):
        return (np.full(x.data.shape, float(grad), dtype=x.data.dtype),)

    return op_output("sum", (x,), out, backward_fn)


def tmean(x: Tensor) -> Tensor:
    """Mean of all elements, as a scalar tensor."""
    n = x.data.size
    if n == 0:
        raise DimensionError("mean of an empty tensor")
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def backward_fn(grad):
        return (np.full(x.data.shape, float(grad) / n, dtype=x.data.dtype),)

    return op_output("mean", (x,), out, backward_fn)
