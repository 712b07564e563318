"""Float64 tensors with tape-based reverse-mode differentiation.

The tape is a Wengert list: every primitive operation executed while a
``Tape`` is active appends one record, and ``backward`` replays the records
in exact reverse order, accumulating gradients into the ``requires_grad``
leaves. Everything is numpy float64: the models in this package are small
enough that double precision plus serial execution is the right trade, and
it is what makes the finite-difference gradient checks meaningful.

Tensors and tapes are single-owner objects. They may be handed between
threads but must never be mutated concurrently.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolationError, DimensionError, NumericError

# Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before any log, which
# also pins the 0*log(0) = 0 convention for saturated predictions.
PROB_EPS = 1e-12


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolationError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Tape:
    """Ordered record of primitive operations for one backward pass.

    Use as a context manager. While active, any primitive op whose output
    requires a gradient appends one record ``(output, inputs, rule)`` where
    ``rule(grad_out)`` returns the local input gradients. Backward walks the
    records in exact reverse order of recording.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise RuntimeError("tape stack corrupted: exited a tape that is not innermost")
        return False

    def record(self, output, inputs, rule):
        self.records.append((output, inputs, rule))

    def __len__(self):
        return len(self.records)


_TAPE_STACK: list[Tape] = []


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(out: Tensor, inputs, rule) -> Tensor:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, rule)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(out, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit(out, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _emit(out, (a, b), rule)


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data, a.requires_grad)
    return _emit(out, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    """Multiply by a python scalar constant (no gradient w.r.t. ``c``)."""
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c, a.requires_grad)
    return _emit(out, (a,), lambda g: (g * c,))


def square(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data * a.data, a.requires_grad)
    return _emit(out, (a,), lambda g: (2.0 * a.data * g,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: shapes {a.data.shape} and {b.data.shape} do not conform"
        )
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)

    def rule(g):
        return g @ b.data.T, a.data.T @ g

    return _emit(out, (a, b), rule)


def linear(x, weights, bias) -> Tensor:
    """Affine map ``x @ weights + bias`` for a (batch, in) input."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.data.ndim != 2 or weights.data.ndim != 2 or x.data.shape[1] != weights.data.shape[0]:
        raise DimensionError(
            f"linear: input shape {x.data.shape} does not conform with "
            f"weight shape {weights.data.shape}"
        )
    if bias.data.shape != (weights.data.shape[1],):
        raise DimensionError(
            f"linear: bias shape {bias.data.shape} does not match weight shape "
            f"{weights.data.shape}"
        )
    return add(matmul(x, weights), bias)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, 0.0), a.requires_grad)
    return _emit(out, (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])  # stable branch for large negative inputs
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y, a.requires_grad)
    return _emit(out, (a,), lambda g: (g * y * (1.0 - y),))


def softmax(a) -> Tensor:
    """Row-wise softmax of a (batch, classes) tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"softmax: expected 2-D input, got shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, a.requires_grad)

    def rule(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit(out, (a,), rule)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data), a.requires_grad)
    return _emit(out, (a,), lambda g: (g / a.data,))


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi), a.requires_grad)
    inside = (a.data >= lo) & (a.data <= hi)
    return _emit(out, (a,), lambda g: (g * inside,))


def clamp_probs(a) -> Tensor:
    return clamp(a, PROB_EPS, 1.0 - PROB_EPS)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(), a.requires_grad)
    return _emit(out, (a,), lambda g: (np.full_like(a.data, float(g)),))


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    out = Tensor(a.data.mean(), a.requires_grad)
    return _emit(out, (a,), lambda g: (np.full_like(a.data, float(g) / n),))


def concat_columns(tensors) -> Tensor:
    """Concatenate 2-D tensors along axis 1."""
    tensors = [as_tensor(t) for t in tensors]
    rows = {t.data.shape[0] for t in tensors}
    if any(t.data.ndim != 2 for t in tensors) or len(rows) != 1:
        raise DimensionError(
            f"concat_columns: incompatible shapes {[t.data.shape for t in tensors]}"
        )
    widths = [t.data.shape[1] for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1),
                 any(t.requires_grad for t in tensors))
    offsets = np.cumsum([0] + widths)

    def rule(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    return _emit(out, tuple(tensors), rule)


# ---------------------------------------------------------------------------
# backward pass and parameter updates
# ---------------------------------------------------------------------------

def _backward_grads(loss: Tensor, tape: Tape) -> dict:
    """Replay ``tape`` backward from ``loss``; return {id(tensor): grad array}.

    Only tensors that actually received gradient appear in the result. The
    caller decides how to surface zeros for non-participating leaves.
    """
    if loss.data.size != 1:
        raise ContractViolationError(
            f"backward requires a scalar loss, got shape {loss.data.shape}"
        )
    grads = {id(loss): np.ones_like(loss.data)}
    for out, inputs, rule in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        input_grads = rule(g)
        for t, ig in zip(inputs, input_grads):
            if ig is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
    return grads


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires_grad leaf that appears on the tape.

    Leaves reachable on the tape but not contributing to the loss get an
    exact zero gradient. Gradients accumulate over repeated calls; use
    ``zero_grads`` between steps.
    """
    if len(tape.records) == 0:
        raise ContractViolationError("backward requires a nonempty tape")
    grads = _backward_grads(loss, tape)
    produced = {id(out) for out, _, _ in tape.records}
    leaves = {}
    for _, inputs, _ in tape.records:
        for t in inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(t.data)
        t.grad = g if t.grad is None else t.grad + g


def zero_grads(params) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


def sgd_step(params, learning_rate: float) -> None:
    """One plain gradient-descent step; gradients are cleared to zero after.

    ``learning_rate`` of 0 is the identity on parameters.
    """
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ContractViolationError("sgd_step: parameter is missing its gradient")
    for p in params:
        p.data = p.data - learning_rate * p.grad
        p.grad = np.zeros_like(p.data)


class SGD:
    """Minibatch SGD over a fixed parameter list, with optional momentum.

    With ``momentum=0`` (the default) a step is bit-identical to
    ``sgd_step``; momentum is an opt-in extension.
    """

    def __init__(self, params, learning_rate: float, momentum: float = 0.0):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self._velocity = None

    def step(self) -> None:
        if self.momentum == 0.0:
            sgd_step(self.params, self.learning_rate)
            return
        if self._velocity is None:
            self._velocity = [np.zeros_like(p.data) for p in self.params]
        for p in self.params:
            if p.grad is None:
                raise ContractViolationError("sgd_step: parameter is missing its gradient")
        for v, p in zip(self._velocity, self.params):
            v *= self.momentum
            v += p.grad
            p.data = p.data - self.learning_rate * v
            p.grad = np.zeros_like(p.data)


def gradient_check(f, point: Tensor, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map ``point`` to a scalar Tensor and be evaluable in an
    epsilon-neighborhood of ``point``. Returns
    ``max_i |analytic_i - numeric_i| / max(1, |analytic_i|)``.
    """
    if not (1e-8 <= epsilon <= 1e-3):
        raise ContractViolationError(f"epsilon {epsilon} outside [1e-8, 1e-3]")
    original_flag = point.requires_grad
    point.requires_grad = True  # the point is the differentiation target
    try:
        with Tape() as tape:
            out = f(point)
        if out.data.size != 1:
            raise ContractViolationError("gradient_check requires a scalar-valued function")
        if not np.isfinite(out.data).all():
            raise NumericError("gradient_check: function is non-finite at the base point")
        if len(tape.records) > 0:
            grads = _backward_grads(out, tape)
            analytic = grads.get(id(point))
        else:
            analytic = None
    finally:
        point.requires_grad = original_flag
    if analytic is None:
        analytic = np.zeros_like(point.data)

    flat = point.data.reshape(-1)
    analytic_flat = analytic.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        f_plus = f(point).item()
        flat[i] = orig - epsilon
        f_minus = f(point).item()
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError("gradient_check: function is non-finite at a perturbed point")
        numeric = (f_plus - f_minus) / (2.0 * epsilon)
        a = analytic_flat[i]
        err = abs(a - numeric) / max(1.0, abs(a))
        if err > worst:
            worst = err
    return worst
