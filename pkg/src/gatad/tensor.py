"""Tape-based reverse-mode automatic differentiation over float64 arrays.

A Tensor wraps a numpy float64 array. Operations executed while a Tape is
active are recorded in execution order; Tape.backward walks the records in
reverse, accumulating gradients additively into every tensor reachable from
the loss that requires them. One backward pass per tape; reset() rearms it.

Shapes must conform exactly. The only implicit broadcast allowed in the
binary operations is scalar-vs-tensor; everything else is a loud
DimensionError, so shape bugs surface at the call site instead of three
layers downstream.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, StateError

Array = np.ndarray

_TAPES: list["Tape"] = []


class Tensor:
    """Float64 array plus gradient bookkeeping.

    Leaves are built directly and validated to be finite. Tensors produced
    by recorded operations get requires_grad set automatically. `grad` is
    filled (additively) by the owning tape's backward pass. Trainable leaves
    may be updated in place by an optimizer between tapes; nothing else
    should mutate `data`.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise DimensionError(f"zero-extent tensor shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor data must be finite")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Arithmetic sugar; all routed through the module-level ops so that
    # recording and shape rules live in one place.
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


class Tape:
    """Ordered record of operations for one backward pass.

    Used as a context manager; operations executed inside record themselves
    when any input requires gradients. backward() may be called once, then
    the tape is consumed until reset().
    """

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[Array], None]]] = []
        self._outputs: set[int] = set()
        self._used = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPES.pop()

    def _add(self, out: Tensor, rule: Callable[[Array], None]) -> None:
        if self._used:
            raise StateError("recording on a consumed tape; call reset() first")
        self._records.append((out, rule))
        self._outputs.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into .grad of every recorded input.

        loss must be a scalar produced on this tape. Gradients add up across
        shared operands and across the whole pass; callers zero leaf grads
        between passes.
        """
        if self._used:
            raise StateError("tape already consumed by a backward pass")
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ContractError("backward target must be a scalar tensor")
        if id(loss) not in self._outputs:
            raise ContractError("backward target was not produced on this tape")
        self._used = True
        loss.grad = np.ones_like(loss.data)
        for out, rule in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            rule(g)

    def reset(self) -> None:
        self._records.clear()
        self._outputs.clear()
        self._used = False

    def __len__(self) -> int:
        return len(self._records)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer, np.ndarray)):
        return Tensor(x)
    raise ContractError(f"cannot treat {type(x).__name__} as a tensor")


def _record(out: Tensor, inputs: Sequence[Tensor],
            rule: Callable[[Array], None]) -> Tensor:
    if _TAPES and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPES[-1]._add(out, rule)
    return out


def _accum(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _reduce_to(g: Array, shape: tuple[int, ...]) -> Array:
    # Undo a scalar broadcast: the scalar operand receives the grad sum.
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def _binary(a, b, fwd, da, db) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"elementwise shapes {a.shape} vs {b.shape}")
    out = Tensor(fwd(a.data, b.data))

    def rule(g: Array) -> None:
        _accum(a, _reduce_to(da(g, a.data, b.data), a.shape))
        _accum(b, _reduce_to(db(g, a.data, b.data), b.shape))

    return _record(out, (a, b), rule)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    bt = _as_tensor(b)
    if np.any(bt.data == 0.0):
        raise DomainError("division by zero")
    return _binary(a, bt, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: _accum(a, -g))


def sigmoid(a) -> Tensor:
    """Logistic function, computed via exp(-|x|) so large |x| cannot overflow."""
    a = _as_tensor(a)
    x = a.data
    z = np.exp(-np.abs(x))
    out = Tensor(np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)))

    def rule(g: Array) -> None:
        _accum(a, g * out.data * (1.0 - out.data))

    return _record(out, (a,), rule)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.tanh(a.data))

    def rule(g: Array) -> None:
        _accum(a, g * (1.0 - out.data * out.data))

    return _record(out, (a,), rule)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):  # overflow becomes a DomainError below
        out = Tensor(np.exp(a.data))

    def rule(g: Array) -> None:
        _accum(a, g * out.data)

    return _record(out, (a,), rule)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: _accum(a, g / a.data))


def sqrt(a) -> Tensor:
    """Elementwise square root.

    The derivative at exactly zero is taken as 0 (the subgradient choice
    that makes a composed Euclidean norm stationary at a perfect fit)
    rather than the divergent analytic limit.
    """
    a = _as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt requires non-negative inputs")
    out = Tensor(np.sqrt(a.data))

    def rule(g: Array) -> None:
        safe = np.where(a.data > 0.0, out.data, 1.0)
        _accum(a, g * np.where(a.data > 0.0, 0.5 / safe, 0.0))

    return _record(out, (a,), rule)


def leaky_relu(a, slope: float) -> Tensor:
    a = _as_tensor(a)
    factor = np.where(a.data > 0.0, 1.0, slope)
    out = Tensor(a.data * factor)
    return _record(out, (a,), lambda g: _accum(a, g * factor))


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor) elementwise; grad passes only where a exceeds the floor."""
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, floor))
    mask = a.data > floor

    def rule(g: Array) -> None:
        _accum(a, g * mask)

    return _record(out, (a,), rule)


def softmax(a) -> Tensor:
    """Softmax along the last axis with max subtraction for stability."""
    a = _as_tensor(a)
    if a.ndim == 0:
        raise DimensionError("softmax needs at least one axis")
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def rule(g: Array) -> None:
        dot = np.sum(g * out.data, axis=-1, keepdims=True)
        _accum(a, out.data * (g - dot))

    return _record(out, (a,), rule)


def matmul(a, b) -> Tensor:
    """Matrix product. Accepts 2-D @ 2-D, 3-D @ 2-D, and 3-D @ 3-D with
    matching batch extents; anything else is a dimension error."""
    a, b = _as_tensor(a), _as_tensor(b)
    ok = (
        (a.ndim == 2 and b.ndim == 2)
        or (a.ndim == 3 and b.ndim == 2)
        or (a.ndim == 3 and b.ndim == 3 and a.shape[0] == b.shape[0])
    )
    if not ok or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def rule(g: Array) -> None:
        if a.requires_grad:
            _accum(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim == 3:
                q, r = b.shape
                _accum(b, a.data.reshape(-1, q).T @ g.reshape(-1, r))
            else:
                _accum(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _record(out, (a, b), rule)


def conv1d(x, kernel, bias) -> Tensor:
    """Temporal convolution over the first (time) axis of an n-by-k window.

    kernel has shape (width, k, k) with odd width; the input is zero padded
    by width//2 rows on each side so the output length equals the input
    length. bias has shape (k,). A 3-D input is treated as a batch of
    windows.

    out[t, o] = sum_tau sum_i xpad[t + tau, i] * kernel[tau, i, o] + bias[o]
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if x.ndim not in (2, 3):
        raise DimensionError(f"conv1d input must be 2-D or 3-D, got {x.shape}")
    if kernel.ndim != 3 or kernel.shape[1] != kernel.shape[2]:
        raise DimensionError(f"conv1d kernel must be (width, k, k), got {kernel.shape}")
    width, k = kernel.shape[0], kernel.shape[1]
    if width % 2 == 0:
        raise DimensionError(f"conv1d kernel width must be odd, got {width}")
    if x.shape[-1] != k or bias.shape != (k,):
        raise DimensionError(
            f"conv1d channels disagree: input {x.shape}, kernel {kernel.shape}, "
            f"bias {bias.shape}")

    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    batch, n, _ = xd.shape
    pad = width // 2
    xpad = np.zeros((batch, n + 2 * pad, k))
    xpad[:, pad:pad + n, :] = xd

    acc = np.broadcast_to(bias.data, (batch, n, k)).copy()
    for tau in range(width):
        acc += np.matmul(xpad[:, tau:tau + n, :], kernel.data[tau])
    out = Tensor(acc[0] if squeeze else acc)

    def rule(g: Array) -> None:
        gb = g[None] if squeeze else g
        if bias.requires_grad:
            _accum(bias, gb.sum(axis=(0, 1)))
        if kernel.requires_grad:
            dk = np.empty_like(kernel.data)
            flat_g = gb.reshape(-1, k)
            for tau in range(width):
                dk[tau] = xpad[:, tau:tau + n, :].reshape(-1, k).T @ flat_g
            _accum(kernel, dk)
        if x.requires_grad:
            dpad = np.zeros_like(xpad)
            for tau in range(width):
                dpad[:, tau:tau + n, :] += np.matmul(gb, kernel.data[tau].T)
            dx = dpad[:, pad:pad + n, :]
            _accum(x, dx[0] if squeeze else dx)

    return _record(out, (x, kernel, bias), rule)


def outer_sum(a, b) -> Tensor:
    """Pairwise sums: out[..., i, j] = a[..., i] + b[..., j].

    Leading axes of a and b must agree exactly.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"outer_sum shapes {a.shape} vs {b.shape}")
    out = Tensor(a.data[..., :, None] + b.data[..., None, :])

    def rule(g: Array) -> None:
        _accum(a, g.sum(axis=-1))
        _accum(b, g.sum(axis=-2))

    return _record(out, (a, b), rule)


def add_bias(x, b) -> Tensor:
    """Add a vector b of length d to every row of x (..., d)."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias shapes {x.shape} + {b.shape}")
    out = Tensor(x.data + b.data)

    def rule(g: Array) -> None:
        _accum(x, g)
        _accum(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return _record(out, (x, b), rule)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of no tensors")
    ref = parts[0].shape
    ax = axis % len(ref) if ref else axis
    for p in parts[1:]:
        if p.ndim != len(ref) or any(
                i != ax and p.shape[i] != ref[i] for i in range(p.ndim)):
            raise DimensionError(f"concat shapes {[p.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=ax))
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def rule(g: Array) -> None:
        for p, piece in zip(parts, np.split(g, bounds, axis=ax)):
            _accum(p, piece)

    return _record(out, parts, rule)


def transpose_last(a) -> Tensor:
    """Swap the last two axes."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose_last on shape {a.shape}")
    out = Tensor(np.swapaxes(a.data, -1, -2))
    return _record(out, (a,), lambda g: _accum(a, np.swapaxes(g, -1, -2)))


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"reshape {a.shape} -> {shape}")
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: _accum(a, g.reshape(a.shape)))


def select_axis(a, axis: int, index: int) -> Tensor:
    """Take one slice along an axis, dropping that axis."""
    a = _as_tensor(a)
    if not (-a.ndim <= axis < a.ndim) or not (0 <= index < a.shape[axis]):
        raise DimensionError(f"select_axis({a.shape}, axis={axis}, index={index})")
    out = Tensor(np.take(a.data, index, axis=axis))

    def rule(g: Array) -> None:
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        sel: list = [slice(None)] * a.ndim
        sel[axis] = index
        full[tuple(sel)] = g
        _accum(a, full)

    return _record(out, (a,), rule)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along an axis, keeping the axis."""
    a = _as_tensor(a)
    if not (-a.ndim <= axis < a.ndim) or not (0 <= start < stop <= a.shape[axis]):
        raise DimensionError(
            f"slice_axis({a.shape}, axis={axis}, [{start}:{stop}])")
    sel: list = [slice(None)] * a.ndim
    sel[axis] = slice(start, stop)
    out = Tensor(a.data[tuple(sel)])

    def rule(g: Array) -> None:
        if not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        full[tuple(sel)] = g
        _accum(a, full)

    return _record(out, (a,), rule)


def repeat_new_axis(a, axis: int, times: int) -> Tensor:
    """Insert a new axis and repeat the tensor along it."""
    a = _as_tensor(a)
    if times < 1:
        raise DimensionError(f"repeat_new_axis times={times}")
    out = Tensor(np.repeat(np.expand_dims(a.data, axis), times, axis=axis))
    return _record(out, (a,), lambda g: _accum(a, g.sum(axis=axis)))


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sum(a.data))
    return _record(out, (a,), lambda g: _accum(a, np.broadcast_to(g, a.shape).copy()))


def sum_axis(a, axis: int) -> Tensor:
    a = _as_tensor(a)
    if not (-a.ndim <= axis < a.ndim):
        raise DimensionError(f"sum_axis({a.shape}, axis={axis})")
    out = Tensor(np.sum(a.data, axis=axis))

    def rule(g: Array) -> None:
        _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _record(out, (a,), rule)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.mean(a.data))
    inv = 1.0 / a.size
    return _record(out, (a,),
                   lambda g: _accum(a, np.broadcast_to(g * inv, a.shape).copy()))


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Compare analytic gradients of f at x against central finite differences.

    f may return any tensor; non-scalar outputs are summed before
    differentiating. Returns the maximum relative error
    |analytic - numeric| / max(1, |analytic|) over all components of x.
    Non-finite values anywhere in the evaluation are a domain error.
    """
    leaf = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(leaf)
        loss = out if out.size == 1 else sum_all(out)
    if id(loss) in tape._outputs:  # constant f records nothing
        tape.backward(loss)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

    def value_at(arr: Array) -> float:
        v = np.sum(f(Tensor(arr)).data)
        if not np.isfinite(v):
            raise DomainError("non-finite value during finite differencing")
        return float(v)

    numeric = np.zeros_like(analytic)
    flat = x.data.copy().reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = value_at(flat.reshape(x.shape))
        flat[i] = orig - h
        down = value_at(flat.reshape(x.shape))
        flat[i] = orig
        num_flat[i] = (up - down) / (2.0 * h)

    if not np.all(np.isfinite(analytic)):
        raise DomainError("non-finite analytic gradient")
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
