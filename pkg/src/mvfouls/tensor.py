"""Dense float64 tensors with tape-based reverse-mode autodiff.

Provides exactly the operations the multi-view pipeline needs: dense
linear layers, a 1-d temporal convolution, mean/max reductions, and a
numerically stabilized softmax cross-entropy, each with exact analytic
gradients. Storage is row-major float64 throughout; there is no
broadcasting beyond the bias-add inside ``linear``/``temporal_conv1d``,
and shape mismatches fail fast.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DomainError, LabelError, ShapeError

Array = np.ndarray


class Tensor:
    """Dense n-dimensional float64 array, optionally tracked for gradients.

    Gradients accumulate additively into ``grad`` across backward passes
    until explicitly cleared.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        # np.array keeps 0-d shapes (ascontiguousarray would promote to 1-d)
        arr = np.array(values, dtype=np.float64, order="C")
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data: Array = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() requires a single value, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class Parameter:
    """Named trainable tensor; names are unique within a model."""

    name: str
    tensor: Tensor

    def __post_init__(self):
        if not self.tensor.requires_grad:
            raise ContractError(f"parameter {self.name!r} must require gradients")


@dataclass
class _Record:
    """One executed op: output, inputs, and the local backward rule.

    ``backward`` maps the output gradient to one gradient array per
    input (None for inputs that do not require gradients).
    """

    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[Array], tuple[Array | None, ...]]


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


class Tape:
    """Ordered record of executed ops; replayed in reverse for backward.

    One tape per thread of graph construction; tensors themselves are
    freely shareable values.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise ContractError("tape exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward_fn) -> None:
        self._records.append(_Record(output, tuple(inputs), backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(t) into t.grad for every reachable tensor."""
        if loss.data.ndim != 0:
            raise ContractError(f"backward requires a scalar loss, shape is {loss.shape}")
        pending: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
        touched: dict[int, Tensor] = {id(loss): loss}
        for rec in reversed(self._records):
            out_grad = pending.get(id(rec.output))
            if out_grad is None:
                continue
            for tensor, grad in zip(rec.inputs, rec.backward(out_grad)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in pending:
                    pending[key] = pending[key] + grad
                else:
                    pending[key] = grad
                    touched[key] = tensor
        for key, tensor in touched.items():
            if not tensor.requires_grad:
                continue
            if tensor.grad is None:
                tensor.grad = pending[key].copy().reshape(tensor.shape)
            else:
                tensor.grad = tensor.grad + pending[key].reshape(tensor.shape)


def backward(loss: Tensor) -> None:
    """Run the active tape backward from a scalar loss."""
    tape = active_tape()
    if tape is None:
        raise ContractError("backward requires an active Tape")
    tape.backward(loss)


def _emit(out_data: Array, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(out_data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, backward_fn)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return _emit(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(factor)
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def sum_all(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    return _emit(
        np.asarray(x.data.sum(), dtype=np.float64),
        (x,),
        lambda g: (np.full(x.shape, float(g), dtype=np.float64),),
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    new_shape = tuple(int(d) for d in shape)
    if int(np.prod(new_shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {new_shape}")
    old_shape = x.shape
    return _emit(x.data.reshape(new_shape), (x,), lambda g: (g.reshape(old_shape),))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    if not tensors:
        raise DomainError("stack: empty tensor list")
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != base:
            raise ShapeError(f"stack: shape mismatch {base} vs {t.shape}")
    out_data = np.stack([t.data for t in tensors], axis=0)

    def _backward(g: Array):
        return tuple(g[i] for i in range(len(tensors)))

    return _emit(out_data, tuple(tensors), _backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: out[i, o] = sum_k x[i, k] * w[k, o] + b[o]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeError(
            f"linear expects x[BxI], w[IxO], b[O]; got {x.shape}, {w.shape}, {b.shape}"
        )
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"linear: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")
    out_data = x.data @ w.data + b.data

    def _backward(g: Array):
        return (g @ w.data.T, x.data.T @ g, g.sum(axis=0))

    return _emit(out_data, (x, w, b), _backward)


def relu(x: Tensor) -> Tensor:
    """max(0, x); gradient is zero at exactly zero."""
    mask = x.data > 0.0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def temporal_conv1d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Valid 1-d convolution over the time axis, zero-padded back to T.

    x is [T x C], kernel [K x C x C'], bias [C']; K must be odd and at
    most T. The valid result (T-K+1 steps) is placed centered, so the
    output keeps T rows.
    """
    if x.data.ndim != 2 or kernel.data.ndim != 3 or bias.data.ndim != 1:
        raise ShapeError(
            "temporal_conv1d expects x[TxC], kernel[KxCxC'], bias[C']; "
            f"got {x.shape}, {kernel.shape}, {bias.shape}"
        )
    t_len, c_in = x.shape
    k, kc_in, c_out = kernel.shape
    if kc_in != c_in or bias.shape[0] != c_out:
        raise ShapeError(
            f"temporal_conv1d: channel mismatch x{x.shape} kernel{kernel.shape} bias{bias.shape}"
        )
    if k % 2 == 0:
        raise ConfigError(f"temporal_conv1d: kernel width must be odd, got {k}")
    if k > t_len:
        raise ConfigError(f"temporal_conv1d: kernel width {k} exceeds sequence length {t_len}")

    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=0)  # [T-K+1, C, K]
    core = np.einsum("tck,kcd->td", windows, kernel.data) + bias.data
    pad_left = (k - 1) // 2
    t_core = t_len - k + 1
    out_data = np.zeros((t_len, c_out), dtype=np.float64)
    out_data[pad_left : pad_left + t_core] = core

    def _backward(g: Array):
        g_core = g[pad_left : pad_left + t_core]
        g_bias = g_core.sum(axis=0)
        g_kernel = np.einsum("tck,td->kcd", windows, g_core)
        g_x = np.zeros((t_len, c_in), dtype=np.float64)
        for j in range(k):
            g_x[j : j + t_core] += g_core @ kernel.data[j].T
        return (g_x, g_kernel, g_bias)

    return _emit(out_data, (x, kernel, bias), _backward)


def reduce(x: Tensor, axis: int, mode: str) -> Tensor:
    """Mean or max along one axis (the axis is dropped).

    mean sums in ascending sorted order and short-circuits all-equal
    slices, so the result is bitwise invariant under permutation of the
    reduced axis and exact for identical entries. max routes the
    gradient to the lowest-index maximum only.
    """
    if mode not in ("mean", "max"):
        raise ConfigError(f"reduce: unknown mode {mode!r}")
    ndim = x.data.ndim
    if not -ndim <= axis < ndim:
        raise DomainError(f"reduce: axis {axis} invalid for shape {x.shape}")
    axis = axis % ndim
    n = x.shape[axis]
    if n == 0:
        raise DomainError(f"reduce: empty extent along axis {axis}")

    if mode == "mean":
        ordered = np.sort(x.data, axis=axis)
        total = ordered.sum(axis=axis)
        lo = np.take(ordered, 0, axis=axis)
        hi = np.take(ordered, n - 1, axis=axis)
        out_data = np.where(lo == hi, lo, total / n)

        def _backward_mean(g: Array):
            return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

        return _emit(np.asarray(out_data, dtype=np.float64), (x,), _backward_mean)

    out_data = x.data.max(axis=axis)
    argmax = np.expand_dims(x.data.argmax(axis=axis), axis)  # first max = lowest index

    def _backward_max(g: Array):
        g_x = np.zeros(x.shape, dtype=np.float64)
        np.put_along_axis(g_x, argmax, np.expand_dims(g, axis), axis)
        return (g_x,)

    return _emit(out_data, (x,), _backward_max)


def softmax(values: Array) -> Array:
    """Numerically stable softmax over the last axis of a plain array."""
    z = values - values.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label].

    Stabilized by max-subtraction; gradient is (softmax - onehot) / B.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects logits[BxN], got {logits.shape}")
    batch, n_classes = logits.shape
    idx = np.asarray(list(labels), dtype=np.int64)
    if idx.shape != (batch,):
        raise ShapeError(f"softmax_cross_entropy: {batch} rows but {idx.size} labels")
    for pos, v in enumerate(idx):
        if not 0 <= v < n_classes:
            raise LabelError(f"label {int(v)} at position {pos} outside [0, {n_classes})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    log_probs = z - np.log(denom)
    loss = np.asarray(-log_probs[np.arange(batch), idx].mean(), dtype=np.float64)

    def _backward(g: Array):
        grad = ez / denom
        grad[np.arange(batch), idx] -= 1.0
        return (grad * (float(g) / batch),)

    return _emit(loss, (logits,), _backward)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error of the taped gradient vs central differences.

    f must be scalar-valued and smooth at x (the caller keeps inputs
    away from relu/max kinks). Error per coordinate is
    |analytic - fd| / max(1, |analytic|).
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(probe)
        if out.data.ndim != 0:
            raise ContractError(f"grad_check requires a scalar-valued f, got shape {out.shape}")
        tape.backward(out)
    analytic = probe.grad.reshape(-1).copy()

    flat = x.data.reshape(-1).copy()
    worst = 0.0
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        f_plus = f(Tensor(bumped.reshape(x.shape))).item()
        bumped[i] = flat[i] - h
        f_minus = f(Tensor(bumped.reshape(x.shape))).item()
        fd = (f_plus - f_minus) / (2.0 * h)
        err = abs(analytic[i] - fd) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst


def zero_grads(params) -> None:
    for p in params:
        p.tensor.zero_grad()
