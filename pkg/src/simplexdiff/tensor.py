"""Dense tensors with reverse-mode automatic differentiation.

numpy owns the storage and the arithmetic; the tape built here owns the
bookkeeping. A fresh tape is opened per training step (define-by-run),
operations append backward closures while the tape is active, and
``backward`` replays them in reverse order. Tapes are thread-local; a
tensor can be handed to another thread once it is detached from any tape.

Training runs in float32; gradient-check mode uses float64 throughout.
"""

from __future__ import annotations

import math
import threading

import numpy as np

_STATE = threading.local()

_FLOAT_DTYPES = (np.float32, np.float64)


def _active_tape():
    return getattr(_STATE, "tape", None)


class Tape:
    """Records operation order for one backward pass.

    Use as a context manager around the forward computation. A tape can be
    consumed by ``backward`` exactly once; rebuild the graph for the next
    step instead of reusing it.
    """

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = None
        return False


class Tensor:
    """An n-dimensional float array, optionally carrying a gradient."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        """A view of the same values, off the tape and without gradient."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Small conveniences; the op functions below do the real work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=False, dtype=dtype)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _result(data: np.ndarray, inputs, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    tape = _active_tape()
    tracked = tape is not None and any(i.requires_grad for i in inputs)
    out.requires_grad = tracked
    out.tape = tape if tracked else None
    if tracked:
        tape._nodes.append((out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor the loss depends on."""
    tape = loss.tape
    if tape is None:
        raise RuntimeError("loss is not attached to a tape; run the forward pass inside `with Tape():`")
    if tape._consumed:
        raise RuntimeError("backward already ran on this tape; rebuild the graph before calling it again")
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    tape._consumed = True
    loss.grad = np.ones_like(loss.data)
    try:
        for out, fn in reversed(tape._nodes):
            g = out.grad
            if g is not None:
                fn(g)
                out.grad = None  # grads of op outputs are consumed; free them now
    finally:
        # Drop the node list so the tensor graph has no reference cycles left
        # and dies by refcount instead of waiting on a gen-2 GC pass.
        tape._nodes.clear()


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul shapes disagree: {ad.shape} x {bd.shape}")
    data = np.matmul(ad, bd)

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, bd.swapaxes(-1, -2)), ad.shape))
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                # batched activations x 2-D weight: one fused GEMM instead of
                # a batched product followed by a sum over the batch axes
                flat_a = np.ascontiguousarray(ad).reshape(-1, ad.shape[-1])
                flat_g = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
                _accumulate(b, flat_a.T @ flat_g)
            else:
                _accumulate(b, _unbroadcast(np.matmul(ad.swapaxes(-1, -2), g), bd.shape))

    return _result(data, (a, b), backward_fn)


def affine(x, w, b) -> Tensor:
    """x @ w + b as one node; the fused form every projection uses."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    xd, wd = x.data, w.data
    if xd.ndim < 2 or wd.ndim != 2 or xd.shape[-1] != wd.shape[-2]:
        raise ValueError(f"affine shapes disagree: {xd.shape} x {wd.shape}")
    data = np.matmul(xd, wd)
    data += b.data

    def backward_fn(g):
        if x.requires_grad:
            _accumulate(x, np.matmul(g, wd.T))
        if w.requires_grad:
            if xd.ndim > 2:
                flat_x = np.ascontiguousarray(xd).reshape(-1, xd.shape[-1])
                flat_g = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
                _accumulate(w, flat_x.T @ flat_g)
            else:
                _accumulate(w, xd.T @ g)
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(data, (x, w, b), backward_fn)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _result(data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), backward_fn)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    data = x.data * c

    def backward_fn(g):
        if x.requires_grad:
            _accumulate(x, g * c)

    return _result(data, (x,), backward_fn)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def backward_fn(g):
        if x.requires_grad:
            _accumulate(x, g.reshape(x.data.shape))

    return _result(data, (x,), backward_fn)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    data = np.transpose(x.data, axes)
    inverse = np.argsort(axes)

    def backward_fn(g):
        if x.requires_grad:
            _accumulate(x, np.transpose(g, inverse))

    return _result(data, (x,), backward_fn)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, stop)
                _accumulate(t, g[tuple(idx)])

    return _result(data, tensors, backward_fn)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = x.data[idx]

    def backward_fn(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[idx] = g
            _accumulate(x, full)

    return _result(data, (x,), backward_fn)


def gather_rows(table, ids) -> Tensor:
    """Select rows of a 2-D table by integer ids of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def backward_fn(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.ravel(), g.reshape(-1, table.data.shape[-1]))
            _accumulate(table, gt)

    return _result(data, (table,), backward_fn)


def tensor_sum(x) -> Tensor:
    x = as_tensor(x)
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward_fn(g):
        if x.requires_grad:
            _accumulate(x, np.broadcast_to(g, x.data.shape))

    return _result(data, (x,), backward_fn)


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain-array softmax with max subtraction, shared with the simplex ops."""
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    y = softmax_np(x.data, axis)

    def backward_fn(g):
        if x.requires_grad:
            dot = np.sum(g * y, axis=axis, keepdims=True)
            _accumulate(x, (g - dot) * y)

    return _result(y, (x,), backward_fn)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def backward_fn(g):
        if gain.requires_grad:
            _accumulate(gain, _unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            _accumulate(bias, _unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gx - m1 - xhat * m2))

    return _result(y, (x, gain, bias), backward_fn)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    xd = x.data
    # xd*xd*xd, not xd**3: np.power takes a slow libm path on small floats
    u = xd * xd
    u *= xd
    u *= 0.044715
    u += xd
    u *= _GELU_C
    th = np.tanh(u, out=u)
    y = th + 1.0
    y *= xd
    y *= 0.5

    def backward_fn(g):
        if x.requires_grad:
            du = xd * xd
            du *= 3.0 * 0.044715
            du += 1.0
            du *= _GELU_C
            inner = th * th
            np.subtract(1.0, inner, out=inner)
            inner *= du
            inner *= xd
            inner += 1.0 + th
            inner *= 0.5
            inner *= g
            _accumulate(x, inner)

    return _result(y, (x,), backward_fn)


def dropout(x, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    draw_dtype = x.data.dtype if x.data.dtype == np.float32 else np.float64
    mask = (rng.random(x.data.shape, dtype=draw_dtype) < keep).astype(x.data.dtype) / keep
    data = x.data * mask

    def backward_fn(g):
        if x.requires_grad:
            _accumulate(x, g * mask)

    return _result(data, (x,), backward_fn)


def cross_entropy(logits, targets, mask) -> Tensor:
    """Mean of -log softmax(logits)[target] over masked rows.

    logits is [N, V]; targets and mask are length-N. Computed in
    log-sum-exp form so large logits stay finite.
    """
    logits = as_tensor(logits)
    x = logits.data
    if x.ndim != 2:
        raise ValueError(f"cross_entropy expects [N, V] logits, got shape {x.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if targets.shape != (x.shape[0],) or mask.shape != (x.shape[0],):
        raise ValueError(
            f"cross_entropy row mismatch: logits {x.shape}, targets {targets.shape}, mask {mask.shape}"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= x.shape[1]):
        raise ValueError(f"target id outside vocabulary of size {x.shape[1]}")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("empty loss: mask excludes every position")

    m = x.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=-1))
    rows = np.arange(x.shape[0])
    nll = lse - x[rows, targets]
    loss = np.asarray((nll * mask).sum() / n, dtype=x.dtype)

    def backward_fn(g):
        if logits.requires_grad:
            p = np.exp(x - m)
            p /= p.sum(axis=-1, keepdims=True)
            p[rows, targets] -= 1.0
            p *= (mask.astype(x.dtype) / n)[:, None] * g
            _accumulate(logits, p)

    return _result(loss, (logits,), backward_fn)
