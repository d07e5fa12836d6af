"""Dense tensors with a reverse-mode gradient tape.

Everything in this package that needs gradients runs on the small op set
below. Values live in numpy arrays; the tape records one entry per op and
`backward` replays it in reverse, accumulating into leaf `.grad` buffers.
Gradients are never zeroed implicitly: callers reset them between steps.

A single global precision switch selects float32 or float64 for every new
tensor. Verification code runs at 64 bits, training defaults to 32.
"""

from __future__ import annotations

import math
import threading

import numpy as np

# Additive-mask / log-space sentinel. Finite on purpose so arithmetic with it
# stays NaN-free; exp() of it underflows to exactly 0.0 in both precisions.
NEG_INF = -1.0e30


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class NumericError(ArithmeticError):
    """An op produced NaN or Inf."""


class ContractError(ValueError):
    """A caller violated an interface precondition."""


_DTYPES = {32: np.float32, 64: np.float64}
_precision_bits = 32


def set_precision(bits: int) -> None:
    """Select the global float width (32 or 64) for newly created tensors."""
    global _precision_bits
    if bits not in _DTYPES:
        raise ContractError(f"precision must be 32 or 64, got {bits}")
    _precision_bits = bits


def precision() -> int:
    return _precision_bits


def dtype() -> type:
    return _DTYPES[_precision_bits]


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense array plus optional gradient buffer.

    Tensors are treated as immutable once created. `grad` is populated by
    `backward` for leaves with `requires_grad=True` and accumulates across
    calls until the caller clears it.
    """

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=dtype())
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor created with non-finite values")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: takes ownership of arr, skips the copy.
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.tape = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar. Scalars are promoted to constant tensors.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), _const(-1.0)))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, _const(-1.0)))

    def __neg__(self):
        return mul(self, _const(-1.0))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype()))


def _const(v: float) -> Tensor:
    return Tensor._wrap(np.asarray(v, dtype=dtype()))


class Tape:
    """Ordered record of ops for one reverse sweep.

    Use as a context manager around the forward pass. Ops executed while no
    tape is active (inference) are not recorded. Each thread keeps its own
    active-tape stack, so independent tapes may run in parallel threads.
    """

    def __init__(self):
        self.ops = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def record(self, out: Tensor, inputs, backward_fn) -> None:
        out.tape = self
        self.ops.append((out, tuple(inputs), backward_fn))


def _record(out: Tensor, inputs, backward_fn) -> Tensor:
    if not np.all(np.isfinite(out.data)):
        raise NumericError("op produced non-finite values")
    tape = active_tape()
    if tape is None:
        return out
    if any(t.requires_grad or t.tape is tape for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def backward(root: Tensor) -> None:
    """Reverse sweep from a scalar root, accumulating leaf gradients.

    Repeated calls add into existing `.grad` buffers; clearing between
    optimizer steps is the caller's job.
    """
    if root.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.shape}")
    tape = root.tape
    if tape is None:
        raise ContractError("backward root is not on any tape")
    grads = {id(root): np.ones_like(root.data)}
    for out, inputs, backward_fn in reversed(tape.ops):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, backward_fn(g)):
            if gi is None:
                continue
            if inp.tape is tape:
                acc = grads.get(id(inp))
                grads[id(inp)] = gi if acc is None else acc + gi
            elif inp.requires_grad:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad = inp.grad + gi


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Op set.
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not conform")
    out = Tensor._wrap(a.data @ b.data)

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D operand, got {a.shape}")
    out = Tensor._wrap(np.ascontiguousarray(a.data.T))

    def bw(g):
        return (g.T,)

    return _record(out, (a,), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"add shapes {a.shape} and {b.shape}: {e}") from None
    out = Tensor._wrap(data)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError as e:
        raise DimensionError(f"mul shapes {a.shape} and {b.shape}: {e}") from None
    out = Tensor._wrap(data)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bw)


def relu(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.maximum(a.data, 0))

    def bw(g):
        return (g * (a.data > 0),)

    return _record(out, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor._wrap(y)

    def bw(g):
        return (g * (1.0 - y * y),)

    return _record(out, (a,), bw)


def conv1d(x: Tensor, w: Tensor, causal: bool = True) -> Tensor:
    """1-D convolution over time. x is (T, C_in), w is (K, C_in, C_out).

    Output has the same length as the input. Causal mode pads only on the
    left with K-1 zero frames, so out[t] never sees frames after t.
    Non-causal mode centres the kernel with symmetric zero padding.
    """
    if x.data.ndim != 2 or w.data.ndim != 3:
        raise DimensionError(f"conv1d expects (T,Cin) and (K,Cin,Cout), got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv1d channel mismatch: {x.shape} vs {w.shape}")
    T = x.shape[0]
    K = w.shape[0]
    left = K - 1 if causal else (K - 1) // 2
    right = 0 if causal else K - 1 - left
    xp = np.zeros((T + K - 1, x.shape[1]), dtype=x.data.dtype)
    xp[left:left + T] = x.data
    data = np.zeros((T, w.shape[2]), dtype=x.data.dtype)
    for j in range(K):
        data += xp[j:j + T] @ w.data[j]
    out = Tensor._wrap(data)

    def bw(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        for j in range(K):
            dxp[j:j + T] += g @ w.data[j].T
            dw[j] = xp[j:j + T].T @ g
        return dxp[left:left + T], dw

    return _record(out, (x, w), bw)


def layernorm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance. No affine part;
    scale and shift are applied by the caller with mul/add when wanted."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv
    out = Tensor._wrap(y)

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return _record(out, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._wrap(y)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = _log_softmax_np(x.data, axis)
    out = Tensor._wrap(y)

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), bw)


def _log_softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    s = x - m
    return s - np.log(np.exp(s).sum(axis=axis, keepdims=True))


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """Reduce one axis with max-subtracted log-sum-exp."""
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    data = np.squeeze(m + np.log(s), axis=axis)
    out = Tensor._wrap(data)

    def bw(g):
        return (np.expand_dims(g, axis) * (e / s),)

    return _record(out, (x,), bw)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of `table` by integer id. Gradient scatters back."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
    if idx.ndim != 1:
        raise DimensionError("ids must be a flat sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"id out of range for table with {table.shape[0]} rows")
    out = Tensor._wrap(table.data[idx])

    def bw(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return (dt,)

    return _record(out, (table,), bw)


def strided_mean_downsample(x: Tensor, factor: int) -> Tensor:
    """Average groups of `factor` consecutive frames. (T, d) -> (ceil(T/f), d).

    A short trailing group is averaged over the frames it actually has.
    """
    if factor < 1:
        raise ContractError(f"downsample factor must be >= 1, got {factor}")
    if x.data.ndim != 2:
        raise DimensionError(f"downsample expects (T, d), got {x.shape}")
    T = x.shape[0]
    n_out = -(-T // factor)
    data = np.empty((n_out, x.shape[1]), dtype=x.data.dtype)
    sizes = np.empty(n_out, dtype=np.int64)
    for i in range(n_out):
        lo = i * factor
        hi = min(lo + factor, T)
        sizes[i] = hi - lo
        data[i] = x.data[lo:hi].mean(axis=0)
    out = Tensor._wrap(data)

    def bw(g):
        dx = np.empty_like(x.data)
        for i in range(n_out):
            lo = i * factor
            hi = lo + sizes[i]
            dx[lo:hi] = g[i] / sizes[i]
        return (dx,)

    return _record(out, (x,), bw)


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
    """Single-head scaled dot-product attention with an optional additive mask.

    q, k, v are (T, d). mask, when given, is (T, T) added to the score matrix
    before the row softmax; disallowed positions hold NEG_INF.
    """
    if q.data.ndim != 2 or q.shape != k.shape or k.shape != v.shape:
        raise DimensionError(
            f"attention expects matching (T,d) inputs, got {q.shape}, {k.shape}, {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[1])
    scores = mul(matmul(q, transpose(k)), _const(scale))
    if mask is not None:
        m = mask if isinstance(mask, Tensor) else Tensor._wrap(np.asarray(mask, dtype=dtype()))
        if m.shape != (q.shape[0], q.shape[0]):
            raise DimensionError(f"mask shape {m.shape} does not match T={q.shape[0]}")
        scores = add(scores, m)
    return matmul(softmax(scores, axis=-1), v)


def tsum(x: Tensor, axis=None) -> Tensor:
    """Sum over one axis, or everything when axis is None (0-d output)."""
    data = x.data.sum(axis=axis)
    out = Tensor._wrap(np.asarray(data, dtype=x.data.dtype))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _record(out, (x,), bw)


def gather(x: Tensor, ids) -> Tensor:
    """Select rows of a 2-D tensor by index; gradient scatter-adds."""
    idx = np.asarray(ids, dtype=np.int64)
    if x.data.ndim != 2:
        raise DimensionError(f"gather expects a 2-D tensor, got {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ContractError(f"gather index out of range for {x.shape[0]} rows")
    out = Tensor._wrap(x.data[idx])

    def bw(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        return (dx,)

    return _record(out, (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(str(e)) from None
    out = Tensor._wrap(data)

    def bw(g):
        return (g.reshape(x.shape),)

    return _record(out, (x,), bw)


def detach(x: Tensor) -> Tensor:
    """A constant copy: same values, no gradient path."""
    return Tensor._wrap(x.data.copy())


_OPS = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "relu": relu,
    "tanh": tanh,
    "conv1d": conv1d,
    "layernorm": layernorm,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "logsumexp": logsumexp,
    "embedding_lookup": embedding_lookup,
    "strided_mean_downsample": strided_mean_downsample,
    "masked_attention": masked_attention,
}


def forward_op(kind: str, inputs, attrs: dict | None = None) -> Tensor:
    """Dispatch one op by name. Unknown kinds raise ContractError."""
    fn = _OPS.get(kind)
    if fn is None:
        raise ContractError(f"unknown op kind {kind!r}")
    return fn(*inputs, **(attrs or {}))


def finite_diff_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    `f` maps a tensor to a scalar tensor. The return value is
    max_i |fd_i - grad_i| / (|grad_i| + 1e-8) over all coordinates of x.
    """
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as _:
        y = f(probe)
    if y.size != 1:
        raise ContractError("finite_diff_check needs a scalar-valued function")
    backward(y)
    g = probe.grad if probe.grad is not None else np.zeros_like(probe.data)
    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        hi = f(Tensor(bumped.reshape(x.shape))).item()
        bumped[i] = flat[i] - h
        lo = f(Tensor(bumped.reshape(x.shape))).item()
        fd = (hi - lo) / (2.0 * h)
        gi = float(g.reshape(-1)[i])
        err = abs(fd - gi) / (abs(gi) + 1e-8)
        worst = max(worst, err)
    return worst
