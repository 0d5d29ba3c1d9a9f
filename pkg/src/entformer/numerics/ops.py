"""Differentiable primitives.

Every op accepts :class:`Tensor` operands (tracked) or plain numpy arrays
(constants, no gradient), validates shapes, and registers its backward rule
on the active tape.  Backward rules are pure: they read the gradient and the
saved forward values, and return fresh arrays aligned with the op's inputs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from ..errors import MaskedRowError, ShapeError
from .tensor import Tensor, active_tape, debug_finite_checks_enabled

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _tracked(x) -> Tensor | None:
    return x if isinstance(x, Tensor) else None


def _emit(op_name: str, out_data: np.ndarray, inputs: tuple, backward, *, allow_nonfinite=False) -> Tensor:
    if debug_finite_checks_enabled() and not allow_nonfinite:
        if not np.all(np.isfinite(out_data)):
            raise FloatingPointError(f"non-finite values produced by {op_name}")
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(isinstance(x, Tensor) for x in inputs):
        tape.record(out, tuple(_tracked(x) for x in inputs), backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a, b) -> Tensor:
    """Matrix product with stacked leading dimensions: dA = g·Bᵀ, dB = Aᵀ·g."""
    av, bv = _value(a), _value(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {av.shape} x {bv.shape}")
    try:
        out = np.matmul(av, bv)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions disagree: {av.shape} x {bv.shape}") from exc

    def backward(g):
        ga = _unbroadcast(np.matmul(g, bv.swapaxes(-1, -2)), av.shape)
        gb = _unbroadcast(np.matmul(av.swapaxes(-1, -2), g), bv.shape)
        return ga, gb

    return _emit("matmul", out, (a, b), backward)


def add(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    try:
        out = av + bv
    except ValueError as exc:
        raise ShapeError(f"add shapes do not broadcast: {av.shape} + {bv.shape}") from exc

    def backward(g):
        return _unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)

    return _emit("add", out, (a, b), backward)


def sub(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    try:
        out = av - bv
    except ValueError as exc:
        raise ShapeError(f"sub shapes do not broadcast: {av.shape} - {bv.shape}") from exc

    def backward(g):
        return _unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)

    return _emit("sub", out, (a, b), backward)


def mul(a, b) -> Tensor:
    av, bv = _value(a), _value(b)
    try:
        out = av * bv
    except ValueError as exc:
        raise ShapeError(f"mul shapes do not broadcast: {av.shape} * {bv.shape}") from exc

    def backward(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _emit("mul", out, (a, b), backward)


def scale(a, s: float) -> Tensor:
    av = _value(a)
    s = float(s)
    return _emit("scale", av * s, (a,), lambda g: (g * s,))


def reshape(a, shape) -> Tensor:
    av = _value(a)
    shape = tuple(shape)
    out = av.reshape(shape)
    return _emit("reshape", out, (a,), lambda g: (g.reshape(av.shape).copy(),))


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    av = _value(a)
    out = np.ascontiguousarray(av.swapaxes(axis1, axis2))
    return _emit("swapaxes", out, (a,), lambda g: (np.ascontiguousarray(g.swapaxes(axis1, axis2)),))


def concat(parts, axis: int) -> Tensor:
    parts = list(parts)
    values = [_value(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, bounds, axis=axis))

    return _emit("concat", out, tuple(parts), backward)


def narrow(a, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along ``axis``."""
    av = _value(a)
    if not (0 <= start <= stop <= av.shape[axis]):
        raise ShapeError(f"narrow [{start}:{stop}] out of range for axis {axis} of {av.shape}")
    index = [slice(None)] * av.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = np.ascontiguousarray(av[index])

    def backward(g):
        full = np.zeros_like(av)
        full[index] = g
        return (full,)

    return _emit("narrow", out, (a,), backward)


def gather_rows(table, ids) -> Tensor:
    """Embedding lookup: rows of a 2-D ``table`` selected by an integer array."""
    tv = _value(table)
    ids = np.asarray(ids)
    if tv.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D table, got {tv.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= tv.shape[0]):
        raise ShapeError(f"gather_rows ids out of range [0, {tv.shape[0]})")
    out = tv[ids]

    def backward(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, ids.ravel(), g.reshape(-1, tv.shape[1]))
        return (gt,)

    return _emit("gather_rows", out, (table,), backward)


def pick(a, ids) -> Tensor:
    """out[i] = a[i, ids[i]] for a 2-D ``a``; used to select gold logits."""
    av = _value(a)
    ids = np.asarray(ids)
    if av.ndim != 2 or ids.shape != (av.shape[0],):
        raise ShapeError(f"pick needs (M, V) values and (M,) ids, got {av.shape} and {ids.shape}")
    rows = np.arange(av.shape[0])
    out = av[rows, ids]

    def backward(g):
        ga = np.zeros_like(av)
        ga[rows, ids] = g
        return (ga,)

    return _emit("pick", out, (a,), backward)


def _shift_max(av: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(av, axis=axis, keepdims=True)
    if np.any(np.isneginf(m)):
        raise MaskedRowError(f"softmax slice along axis {axis} is entirely masked")
    return av - m


def softmax(a, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; raises on a fully -inf slice instead of going uniform."""
    av = _value(a)
    e = np.exp(_shift_max(av, axis))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _emit("softmax", out, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    av = _value(a)
    shifted = _shift_max(av, axis)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _emit("log_softmax", out, (a,), backward)


def gelu(a) -> Tensor:
    """Exact erf-based GELU: x·Φ(x) with Φ the standard normal CDF."""
    av = _value(a)
    cdf = 0.5 * (1.0 + erf(av * _INV_SQRT2))
    out = av * cdf

    def backward(g):
        pdf = np.exp(-0.5 * av * av) * _INV_SQRT2PI
        return (g * (cdf + av * pdf),)

    return _emit("gelu", out, (a,), backward)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply gain and bias."""
    av, gv, bv = _value(a), _value(gain), _value(bias)
    d = av.shape[-1]
    if gv.shape != (d,) or bv.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must be ({d},), got {gv.shape} and {bv.shape}")
    mean = av.mean(axis=-1, keepdims=True)
    var = av.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (av - mean) * inv_std
    out = xhat * gv + bv

    def backward(g):
        # d xhat_j / d x_i folded analytically:
        # dx = inv_std/d * (d*gxhat - sum(gxhat) - xhat * sum(gxhat*xhat))
        gxhat = g * gv
        s1 = gxhat.sum(axis=-1, keepdims=True)
        s2 = (gxhat * xhat).sum(axis=-1, keepdims=True)
        ga = inv_std / d * (d * gxhat - s1 - xhat * s2)
        lead = tuple(range(av.ndim - 1))
        return ga, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", out, (a, gain, bias), backward)


def mask_fill(a, keep_mask, fill_value: float) -> Tensor:
    """Keep values where ``keep_mask`` is true, else ``fill_value`` (may be -inf)."""
    av = _value(a)
    keep = np.broadcast_to(np.asarray(keep_mask, dtype=bool), av.shape)
    out = np.where(keep, av, av.dtype.type(fill_value))

    def backward(g):
        return (np.where(keep, g, 0.0),)

    return _emit("mask_fill", out, (a,), backward, allow_nonfinite=True)


def sum_all(a) -> Tensor:
    av = _value(a)
    out = np.asarray(av.sum())
    return _emit("sum_all", out, (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def mean_all(a) -> Tensor:
    av = _value(a)
    out = np.asarray(av.mean())
    inv = 1.0 / av.size

    def backward(g):
        return (np.broadcast_to(g * inv, av.shape).copy(),)

    return _emit("mean_all", out, (a,), backward)


def sum_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    av = _value(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape).copy(),)

    return _emit("sum_axis", out, (a,), backward)


def mean_axis(a, axis: int, keepdims: bool = False) -> Tensor:
    av = _value(a)
    out = av.mean(axis=axis, keepdims=keepdims)
    inv = 1.0 / av.shape[axis]

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * inv, av.shape).copy(),)

    return _emit("mean_axis", out, (a,), backward)


def bce_with_logits(logits, targets) -> Tensor:
    """Elementwise stable binary cross-entropy; d/dz = sigmoid(z) - y."""
    zv = _value(logits)
    yv = np.asarray(_value(targets), dtype=zv.dtype)
    if yv.shape != zv.shape:
        raise ShapeError(f"bce_with_logits shapes disagree: {zv.shape} vs {yv.shape}")
    out = np.maximum(zv, 0.0) - zv * yv + np.log1p(np.exp(-np.abs(zv)))

    def backward(g):
        sig = 1.0 / (1.0 + np.exp(-zv))
        return (g * (sig - yv),)

    return _emit("bce_with_logits", out, (logits,), backward)


def dropout(a, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with an explicit generator; identity when rate == 0."""
    if rate == 0.0:
        return a if isinstance(a, Tensor) else Tensor(a)
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    av = _value(a)
    keep = (rng.random(av.shape) >= rate) / np.array(1.0 - rate, dtype=av.dtype)
    out = av * keep
    return _emit("dropout", out, (a,), lambda g: (g * keep,))
