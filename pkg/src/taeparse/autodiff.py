"""Reverse-mode autodiff over dense numpy arrays.

A dynamic tape records one forward pass at a time; `backward` walks it in
reverse and accumulates gradients into `Tensor.grad`. Only the operations
the seq2seq model needs are provided. Anything executed while no tape is
active (or inside `no_grad()`) is treated as a constant, which is how the
trainer blocks gradient flow through the encoder on the monolingual branch.

Training runs in float32; gradient-check tests build float64 models, where
central finite differences are meaningful.
"""

import numpy as np

from . import kernels

DEBUG_FINITE = False

_LOG_FLOOR = 1e-12

_active_tape = None


class Tensor:
    """A dense array plus its gradient accumulator (None until backward)."""

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Tape:
    """Recording context for one forward pass."""

    def __init__(self):
        self.entries = []  # (output Tensor, backward closure) in forward order

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a tape is already active")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def backward(self, loss):
        """Populate grads of every tensor on the path to `loss`.

        `loss` must be scalar. Tensors not reachable from it keep grad None.
        """
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, bwd in reversed(self.entries):
            if out.grad is not None:
                bwd(out.grad)


class no_grad:
    """Suspend recording; ops inside produce constants."""

    def __enter__(self):
        global _active_tape
        self._saved = _active_tape
        _active_tape = None

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._saved
        return False


def _record(out, bwd):
    if _active_tape is not None:
        _active_tape.entries.append((out, bwd))


def _accum(t, g):
    if t.grad is None:
        t.grad = g if g.base is None else g.copy()
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _make(data):
    if DEBUG_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in forward result")
    return Tensor(data)


def add(a, b):
    out = _make(a.data + b.data)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    _record(out, bwd)
    return out


def mul(a, b):
    out = _make(a.data * b.data)

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    _record(out, bwd)
    return out


def mul_const(a, c):
    """Multiply by a constant scalar or ndarray (no gradient into c)."""
    c = np.asarray(c, dtype=a.data.dtype)
    out = _make(a.data * c)

    def bwd(g):
        _accum(a, _unbroadcast(g * c, a.data.shape))

    _record(out, bwd)
    return out


def scale(a, s):
    return mul_const(a, float(s))


def sub(a, b):
    return add(a, scale(b, -1.0))


def matmul(a, b):
    out = _make(np.matmul(a.data, b.data))

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    _record(out, bwd)
    return out


def relu(a):
    out = _make(np.maximum(a.data, 0))

    def bwd(g):
        _accum(a, g * (a.data > 0))

    _record(out, bwd)
    return out


def sigmoid(a):
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))
    out = _make(y.astype(a.data.dtype))

    def bwd(g):
        _accum(a, g * out.data * (1.0 - out.data))

    _record(out, bwd)
    return out


def softmax(a, mask=None):
    """Softmax over the last axis; mask entries (True/1) are excluded."""
    if mask is not None:
        mask = np.broadcast_to(mask, a.data.shape)
    p = kernels.softmax_fwd(a.data, mask)
    out = _make(p)

    def bwd(g):
        _accum(a, kernels.softmax_bwd(out.data, g))

    _record(out, bwd)
    return out


def normalize(a):
    """Zero-mean unit-variance over the last axis (layer norm core)."""
    y, inv = kernels.norm_fwd(a.data)
    out = _make(y)

    def bwd(g):
        _accum(a, kernels.norm_bwd(out.data, inv, g))

    _record(out, bwd)
    return out


def embedding(table, ids):
    """Gather rows of `table` (a Tensor) by constant integer ids."""
    ids = np.asarray(ids)
    out = _make(table.data[ids])

    def bwd(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        kernels.scatter_add_rows(table.grad, ids.reshape(-1),
                                 np.ascontiguousarray(g).reshape(-1, g.shape[-1]))

    _record(out, bwd)
    return out


def dropout(a, p, rng):
    """Inverted dropout with an explicit mask drawn from `rng`."""
    if p <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype)
    return mul_const(a, keep / (1.0 - p))


def log_clipped(a, floor=_LOG_FLOOR):
    """log(max(x, floor)); keeps the loss finite when a probability underflows."""
    clipped = np.maximum(a.data, floor)
    out = _make(np.log(clipped))

    def bwd(g):
        _accum(a, g / clipped)

    _record(out, bwd)
    return out


def gather_last(a, idx):
    """take_along_axis over the last axis; idx has one index per row."""
    idx = np.asarray(idx)
    out = _make(np.take_along_axis(a.data, idx, axis=-1))

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx, g, axis=-1)
        _accum(a, ga)

    _record(out, bwd)
    return out


def reduce_sum(a, axis=None, keepdims=False):
    out = _make(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    _record(out, bwd)
    return out


def reshape(a, shape):
    out = _make(a.data.reshape(shape))

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    _record(out, bwd)
    return out


def transpose(a, axes):
    inverse = np.argsort(axes)
    out = _make(a.data.transpose(axes))

    def bwd(g):
        _accum(a, g.transpose(inverse))

    _record(out, bwd)
    return out


def copy_mix(gen_probs, copy_w, src_ids, p_gen):
    """Pointer-generator mixture (see kernels.copy_mix_fwd for the formula)."""
    src_ids = np.ascontiguousarray(src_ids, dtype=np.int64)
    out = _make(kernels.copy_mix_fwd(gen_probs.data, copy_w.data, src_ids, p_gen.data))

    def bwd(g):
        d_gen, d_w, d_pg = kernels.copy_mix_bwd(
            gen_probs.data, copy_w.data, src_ids, p_gen.data, g)
        _accum(gen_probs, d_gen)
        _accum(copy_w, d_w)
        _accum(p_gen, d_pg)

    _record(out, bwd)
    return out


def grad_check(f, params, frozen=(), eps=1e-5, coords_per_param=6, seed=0):
    """Max relative error between analytic and central-difference gradients.

    `f()` must rebuild the scalar loss from `params` on every call. Frozen
    parameters are checked to carry no analytic gradient and are excluded
    from the error. Use float64 parameters; float32 drowns the differences
    in rounding error.
    """
    for p in list(params) + list(frozen):
        p.grad = None
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    analytic = {id(p): (None if p.grad is None else p.grad.copy()) for p in params}
    for p in params:
        p.grad = None
    for p in frozen:
        a = analytic.get(id(p))
        if a is not None and np.any(a != 0.0):
            raise AssertionError("frozen parameter received a nonzero gradient")

    rng = np.random.default_rng(seed)
    frozen_ids = {id(p) for p in frozen}
    worst = 0.0
    for p in params:
        if id(p) in frozen_ids:
            continue
        a = analytic[id(p)]
        flat = p.data.reshape(-1)
        n = flat.shape[0]
        picks = rng.choice(n, size=min(coords_per_param, n), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().data)
            flat[i] = orig - eps
            lo = float(f().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            ana = 0.0 if a is None else float(a.reshape(-1)[i])
            err = abs(ana - numeric) / (abs(ana) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst
