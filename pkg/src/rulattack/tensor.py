"""Dense tensors with taped reverse-mode differentiation.

Everything the model families and the gradient-sign attacks need, and no
more: a handful of primitives (matmul, add, mul, sigmoid, tanh, relu,
concat, slice, reshape, conv1d, sum, mean_squared_error), each of which
appends its backward rules to the active :class:`Tape`, and :func:`grad`,
which walks the tape in reverse. Gradients can be taken with respect to
any tensor that appeared on the tape, inputs included, which is exactly
what crafting input perturbations requires; nodes that do not lead to a
requested tensor are skipped, so input-only gradients never pay for
parameter gradients.

Numerics are plain numpy with a fixed (sequential, row-major) accumulation
order, so identical inputs give bit-identical outputs. Primitives that can
create non-finite values from finite inputs raise instead of returning
them. Tensors are immutable once created; a tape is owned by a single
recording context.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import NodeNotOnTape, NonFiniteResult, ShapeMismatch

__all__ = [
    "Tensor", "Tape", "record", "grad",
    "add", "mul", "matmul", "transpose", "sigmoid", "tanh", "relu",
    "concat", "slice_axis", "slice_time", "reshape", "conv1d", "reduce_sum",
    "mean_squared_error",
]


class Tensor:
    """Immutable dense array (row-major numpy storage)."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        arr = np.array(data, dtype=dtype, copy=True)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def numpy(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"


def _wrap(arr) -> Tensor:
    t = Tensor.__new__(Tensor)
    arr = np.asarray(arr)
    if arr.base is not None:
        arr = arr.copy()  # detach views so results own their storage
    arr.flags.writeable = False
    t.data = arr
    return t


class Tape:
    """Ordered record of primitive applications.

    Entries are appended in execution order, which is a topological order
    of the computation; every result tensor has exactly one producing
    entry. Use as a context manager to make it the thread's recording
    target.
    """

    def __init__(self):
        self._entries = []   # (result_id, ((input_tensor, grad_fn), ...))
        self._known = set()  # ids of every tensor that appeared on the tape
        self._results = []   # keep results alive so ids stay unique

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self._entries)

    def knows(self, t: Tensor) -> bool:
        return id(t) in self._known

    def _record(self, result, pairs):
        self._entries.append((id(result), pairs))
        self._known.add(id(result))
        for t, _ in pairs:
            self._known.add(id(t))
        self._results.append(result)


_LOCAL = threading.local()


def _tape_stack():
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = _LOCAL.stack = []
    return stack


def record() -> Tape:
    """Open a fresh tape: ``with record() as tape: ...``"""
    return Tape()


def grad(tape: Tape, loss: Tensor, wrt) -> dict:
    """Reverse-mode gradients of a scalar ``loss`` for each tensor in ``wrt``.

    Returns a dict mapping each requested tensor to its gradient tensor
    (zeros if the loss does not depend on it). Raises
    :class:`NodeNotOnTape` if ``loss`` or any ``wrt`` tensor never
    appeared on this tape.
    """
    wrt = list(wrt)
    if loss.size != 1:
        raise ShapeMismatch("grad: loss must be scalar, got", loss.shape)
    if not tape.knows(loss):
        raise NodeNotOnTape("loss tensor is not on this tape")
    for t in wrt:
        if not tape.knows(t):
            raise NodeNotOnTape(f"requested tensor {t!r} is not on this tape")

    # forward sweep: which nodes does a requested tensor flow into?
    needed = {id(t) for t in wrt}
    for result_id, pairs in tape._entries:
        if any(id(t) in needed for t, _ in pairs):
            needed.add(result_id)

    partials = {id(loss): np.ones_like(loss.data)}
    for result_id, pairs in reversed(tape._entries):
        g = partials.get(result_id)
        if g is None:
            continue
        for t, fn in pairs:
            if id(t) not in needed:
                continue
            contrib = fn(g)
            prev = partials.get(id(t))
            partials[id(t)] = contrib if prev is None else prev + contrib
    return {
        t: _wrap(partials[id(t)]) if id(t) in partials else _wrap(np.zeros_like(t.data))
        for t in wrt
    }


# -- primitive plumbing ------------------------------------------------------

def _emit(out, pairs, check: bool) -> Tensor:
    if check and not np.isfinite(out).all():
        raise NonFiniteResult("primitive produced non-finite values")
    result = _wrap(out)
    stack = _tape_stack()
    if stack:
        stack[-1]._record(result, pairs)
    return result


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic --------------------------------------------------------------

def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting; either side may be a scalar."""
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        raise TypeError("add: at least one operand must be a Tensor")
    da = a.data if ta else a
    db = b.data if tb else b
    try:
        out = da + db
    except ValueError:
        raise ShapeMismatch("add", np.shape(da), np.shape(db)) from None
    pairs = []
    if ta:
        pairs.append((a, lambda g: _unbroadcast(g, a.shape)))
    if tb:
        pairs.append((b, lambda g: _unbroadcast(g, b.shape)))
    return _emit(out, tuple(pairs), check=True)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting; either side may be a scalar."""
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        raise TypeError("mul: at least one operand must be a Tensor")
    da = a.data if ta else a
    db = b.data if tb else b
    try:
        out = da * db
    except ValueError:
        raise ShapeMismatch("mul", np.shape(da), np.shape(db)) from None
    pairs = []
    if ta:
        pairs.append((a, lambda g: _unbroadcast(g * db, a.shape)))
    if tb:
        pairs.append((b, lambda g: _unbroadcast(g * da, b.shape)))
    return _emit(out, tuple(pairs), check=True)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product ``[m,k] @ [k,n]``."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    da, db = a.data, b.data
    out = da @ db
    return _emit(out, ((a, lambda g: g @ db.T), (b, lambda g: da.T @ g)), check=True)


def transpose(a: Tensor) -> Tensor:
    """2-D transpose."""
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose expects 2-D, got", a.shape)
    return _emit(a.data.T.copy(), ((a, lambda g: g.T),), check=False)


# -- activations -------------------------------------------------------------

def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit(out, ((a, lambda g: g * out * (1.0 - out)),), check=False)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _emit(out, ((a, lambda g: g * (1.0 - out * out)),), check=False)


def relu(a: Tensor) -> Tensor:
    x = a.data
    out = np.maximum(x, 0.0)
    return _emit(out, ((a, lambda g: g * (x > 0)),), check=False)


# -- structure ---------------------------------------------------------------

def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    if not parts or not all(isinstance(p, Tensor) for p in parts):
        raise TypeError("concat expects a non-empty list of Tensors")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *[p.shape for p in parts]) from None

    pairs = []
    offset = 0
    for p in parts:
        width = p.shape[axis]
        index = tuple(slice(None) if i != axis else slice(offset, offset + width)
                      for i in range(out.ndim))
        pairs.append((p, lambda g, index=index: np.ascontiguousarray(g[index])))
        offset += width
    return _emit(out, tuple(pairs), check=False)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``[start:stop)`` along one axis."""
    dim = a.shape[axis] if axis < a.data.ndim else None
    if dim is None or not (0 <= start < stop <= dim):
        raise ShapeMismatch(f"slice_axis(axis={axis}, {start}:{stop})", a.shape)
    index = tuple(slice(None) if i != axis else slice(start, stop)
                  for i in range(a.data.ndim))
    out = np.ascontiguousarray(a.data[index])

    def grad_input(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return full

    return _emit(out, ((a, grad_input),), check=False)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeMismatch("reshape", a.shape, shape)
    orig = a.shape
    return _emit(a.data.reshape(shape), ((a, lambda g: g.reshape(orig)),), check=False)


def slice_time(a: Tensor, t: int) -> Tensor:
    """One time step of a ``[B, T, D]`` sequence as ``[B, D]``.

    Fused slice+squeeze; the hot path of the recurrent stacks.
    """
    if a.data.ndim != 3 or not (0 <= t < a.shape[1]):
        raise ShapeMismatch(f"slice_time(t={t})", a.shape)
    out = np.ascontiguousarray(a.data[:, t, :])

    def grad_input(g):
        full = np.zeros_like(a.data)
        full[:, t, :] = g
        return full

    return _emit(out, ((a, grad_input),), check=False)


# -- convolution -------------------------------------------------------------

def conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Stride-1, zero-padded "same" 1-D convolution (cross-correlation).

    ``x`` is ``[T, C]`` or batched ``[B, T, C]``; ``w`` is ``[K, C, F]``.
    Output keeps the time length: ``out[t] = sum_k x[t + k - (K-1)//2] @ w[k]``.
    """
    if w.data.ndim != 3:
        raise ShapeMismatch("conv1d kernel expects [K, C, F], got", w.shape)
    batched = x.data.ndim == 3
    if not batched and x.data.ndim != 2:
        raise ShapeMismatch("conv1d input expects [T, C] or [B, T, C], got", x.shape)
    x3 = x.data if batched else x.data[None]
    bsz, t_len, c_in = x3.shape
    k_len, c_w, f_out = w.shape
    if c_w != c_in:
        raise ShapeMismatch("conv1d", x.shape, w.shape)

    pad_left = (k_len - 1) // 2
    xp = np.zeros((bsz, t_len + k_len - 1, c_in), dtype=x3.dtype)
    xp[:, pad_left:pad_left + t_len] = x3
    out = np.zeros((bsz, t_len, f_out), dtype=x3.dtype)
    wdata = w.data
    for k in range(k_len):
        out += xp[:, k:k + t_len, :] @ wdata[k]

    def grad_input(g):
        g3 = g if batched else g[None]
        dxp = np.zeros_like(xp)
        for k in range(k_len):
            dxp[:, k:k + t_len, :] += g3 @ wdata[k].T
        dx = dxp[:, pad_left:pad_left + t_len, :]
        return dx if batched else dx[0]

    def grad_kernel(g):
        g3 = g if batched else g[None]
        flat_g = g3.reshape(-1, f_out)
        dw = np.zeros_like(wdata)
        for k in range(k_len):
            dw[k] = xp[:, k:k + t_len, :].reshape(-1, c_in).T @ flat_g
        return dw

    return _emit(out if batched else out[0],
                 ((x, grad_input), (w, grad_kernel)), check=True)


# -- reductions --------------------------------------------------------------

def reduce_sum(a: Tensor, axis=None) -> Tensor:
    """Sum over all elements (default) or one axis."""
    out = np.asarray(a.data.sum(axis=axis))
    shape = a.shape

    def grad_input(g):
        if axis is None:
            return np.broadcast_to(g, shape).astype(a.dtype, copy=True)
        return np.broadcast_to(np.expand_dims(g, axis), shape).astype(a.dtype, copy=True)

    return _emit(out, ((a, grad_input),), check=True)


def mean_squared_error(pred: Tensor, target: Tensor) -> Tensor:
    """Scalar mean of elementwise squared differences."""
    if pred.shape != target.shape:
        raise ShapeMismatch("mean_squared_error", pred.shape, target.shape)
    diff = pred.data - target.data
    out = np.asarray(np.mean(diff * diff))
    scale = 2.0 / max(pred.size, 1)
    return _emit(out, ((pred, lambda g: g * scale * diff),
                       (target, lambda g: -(g * scale * diff))), check=True)
