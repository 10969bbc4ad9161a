"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything learned in this package (encoder, graph attention, fusion,
classifier head) is built from the primitives in this module.  Design
points:

* float64 everywhere; sizes are desk-scale, so gradient fidelity matters
  more than speed.
* Operations execute eagerly on numpy arrays.  When a ``Tape`` is active
  and an input requires gradients, the primitive application is recorded
  as a node; ``Tape.backward`` replays the node list once in reverse.
* Any non-finite value produced by a primitive raises ``NonFiniteError``
  immediately instead of propagating NaN/Inf.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericsError(Exception):
    """Base class for tensor/AD failures."""


class ShapeError(NumericsError):
    """Operands have incompatible shapes for the requested primitive."""


class NonFiniteError(NumericsError):
    """A primitive produced NaN or Inf."""


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} produced non-finite values")


class Tensor:
    """Immutable dense float64 array, optionally tracked for gradients.

    The value buffer is read-only after construction.  Parameter updates
    between training steps go through :meth:`replace_data`, which installs
    a fresh buffer; gradients recorded on an earlier tape are unaffected
    because backward functions close over the arrays they need.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite("tensor construction", arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "requires_grad", bool(requires_grad))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def replace_data(self, arr: np.ndarray) -> None:
        """Install a new value buffer (optimizer / checkpoint-load use only)."""
        new = np.array(arr, dtype=np.float64)
        if new.shape != self.data.shape:
            raise ShapeError(f"replace_data shape {new.shape} != existing {self.data.shape}")
        _check_finite("replace_data", new)
        new.setflags(write=False)
        object.__setattr__(self, "data", new)

    def __setattr__(self, name, value):  # pragma: no cover - guard rail
        raise AttributeError("Tensor is immutable; use replace_data for parameter updates")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Arithmetic sugar.  Functional forms below do the real work.
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    """Wrap plain values as constant (non-gradient) tensors."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


class _Node:
    """One recorded primitive application."""

    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...],
                 backward_fn: Callable[[np.ndarray], tuple]):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_ACTIVE = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = []
        _ACTIVE.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Gradients:
    """Per-tensor gradient accumulators produced by ``Tape.backward``.

    Tensors never touched by the loss read as exact zeros.
    """

    def __init__(self, store: dict[int, tuple[Tensor, np.ndarray]]):
        self._store = store

    def wrt(self, t: Tensor) -> np.ndarray:
        entry = self._store.get(id(t))
        if entry is None:
            return np.zeros(t.shape, dtype=np.float64)
        return entry[1]

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._store


class Tape:
    """Wengert list: primitives recorded in execution (topological) order.

    Use one tape per training step::

        with Tape() as tape:
            loss = model_loss(...)
        grads = tape.backward(loss)

    Tapes are single-threaded; independent tapes on different threads do
    not share state (the active-tape stack is thread-local).
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> Gradients:
        """Accumulate d(loss)/d(tensor) for every recorded tensor.

        Visits each node exactly once, in reverse recording order.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        store: dict[int, tuple[Tensor, np.ndarray]] = {
            id(loss): (loss, np.ones(loss.shape, dtype=np.float64))
        }
        for node in reversed(self._nodes):
            entry = store.get(id(node.out))
            if entry is None:
                continue
            in_grads = node.backward_fn(entry[1])
            for t, g in zip(node.inputs, in_grads):
                if g is None or not t.requires_grad:
                    continue
                _check_finite("backward", g)
                prev = store.get(id(t))
                if prev is None:
                    store[id(t)] = (t, np.array(g, dtype=np.float64))
                else:
                    store[id(t)] = (t, prev[1] + g)
        return Gradients(store)


def _apply(name: str, out_data: np.ndarray, inputs: tuple[Tensor, ...],
           backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    _check_finite(name, out_data)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    arr = np.asarray(out_data, dtype=np.float64)
    arr.setflags(write=False)
    object.__setattr__(out, "data", arr)
    object.__setattr__(out, "requires_grad", requires)
    if requires:
        tape = active_tape()
        if tape is not None:
            tape._nodes.append(_Node(out, inputs, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _apply("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _apply("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _apply("mul", out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (-g,)

    return _apply("neg", -a.data, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product of two 2-D tensors; gradients g·bᵀ and aᵀ·g."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _apply("matmul", out, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.shape}")

    def backward(g):
        return (g.T,)

    return _apply("transpose", a.data.T, (a,), backward)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(tuple(shape))

    def backward(g):
        return (g.reshape(a.shape),)

    return _apply("reshape", out, (a,), backward)


def gather_rows(a, indices: Sequence[int]) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into the source."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D tensor, got {a.shape}")
    idx = np.asarray(list(indices), dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows index out of range for {a.shape[0]} rows")
    out = a.data[idx]

    def backward(g):
        acc = np.zeros(a.shape, dtype=np.float64)
        np.add.at(acc, idx, g)
        return (acc,)

    return _apply("gather_rows", out, (a,), backward)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.array(piece) for piece in np.split(g, splits, axis=axis))

    return _apply("concat", out, tuple(parts), backward)


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(np.float64, copy=True),)
        expanded = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(expanded, a.shape).astype(np.float64, copy=True),)

    return _apply("sum", out, (a,), backward)


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).astype(np.float64, copy=True),)
        expanded = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(expanded / n, a.shape).astype(np.float64, copy=True),)

    return _apply("mean", out, (a,), backward)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    """Elementwise max(x, slope·x); the kink at 0 takes the positive branch."""
    a = as_tensor(a)
    if not 0.0 < slope < 1.0:
        raise ShapeError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    positive = a.data >= 0.0
    out = np.where(positive, a.data, slope * a.data)

    def backward(g):
        return (np.where(positive, g, slope * g),)

    return _apply("leaky_relu", out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _apply("sigmoid", out, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Normalized exponentials along ``axis``, computed with max-subtraction."""
    a = as_tensor(a)
    if a.data.ndim == 0 or a.data.shape[axis] == 0:
        raise ShapeError(f"softmax over an empty axis (shape {a.shape}, axis {axis})")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _apply("softmax", out, (a,), backward)


def cross_entropy(logits, labels: Sequence[int],
                  class_weights: Sequence[float] | None = None) -> Tensor:
    """Mean negative log-softmax of the true class over a batch.

    ``logits`` is (B, C); ``labels`` holds B class indices.  With
    ``class_weights`` the per-example losses are weighted by the true
    class's weight and normalized by the total weight in the batch.
    """
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects (batch, classes) logits, got {logits.shape}")
    batch, n_classes = logits.shape
    idx = list(labels)
    if len(idx) != batch:
        raise ShapeError(f"cross_entropy got {len(idx)} labels for batch size {batch}")
    for pos, lab in enumerate(idx):
        if not 0 <= int(lab) < n_classes:
            raise ShapeError(
                f"cross_entropy label {lab} at position {pos} outside [0, {n_classes})")
    idx_arr = np.asarray(idx, dtype=np.intp)

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)

    if class_weights is None:
        weights = np.ones(batch, dtype=np.float64)
    else:
        cw = np.asarray(list(class_weights), dtype=np.float64)
        if cw.shape != (n_classes,):
            raise ShapeError(f"class_weights must have length {n_classes}, got {cw.shape}")
        weights = cw[idx_arr]
    total = weights.sum()
    per_example = -log_probs[np.arange(batch), idx_arr]
    out = np.asarray((weights * per_example).sum() / total)

    def backward(g):
        one_hot = np.zeros((batch, n_classes), dtype=np.float64)
        one_hot[np.arange(batch), idx_arr] = 1.0
        grad = (probs - one_hot) * (weights / total)[:, None]
        return (g * grad,)

    return _apply("cross_entropy", out, (logits,), backward)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=np.float64))
