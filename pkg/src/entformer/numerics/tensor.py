"""Dense tensors and the reverse-mode differentiation tape.

A :class:`Tensor` wraps a contiguous row-major float array (32- or 64-bit).
Differentiable operations live in :mod:`entformer.numerics.ops`; while a
:class:`Tape` is active they append one record per primitive, and
:meth:`Tape.backward` replays the records in exact reverse order,
accumulating gradients keyed by tensor identity.  Constants (masks, index
matrices) are passed to ops as plain numpy arrays and receive no gradient.
"""

from __future__ import annotations

import threading

import numpy as np

from ..errors import ShapeError, ValidationError

DTYPES = {"f32": np.float32, "f64": np.float64}

_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = []
        _state.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


_debug_finite_checks = False


def set_debug_finite_checks(enabled: bool) -> None:
    """Globally toggle NaN/Inf assertions on every op output (slow; for tests)."""
    global _debug_finite_checks
    _debug_finite_checks = bool(enabled)


def debug_finite_checks_enabled() -> bool:
    return _debug_finite_checks


class Tensor:
    """A differentiable dense array of float32 or float64 values."""

    __slots__ = ("data", "name")

    def __init__(self, data, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(dtype, str):
            dtype = DTYPES[dtype]
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def copy(self, name: str | None = None) -> "Tensor":
        return Tensor(self.data.copy(), name=name or self.name)

    def astype(self, dtype) -> "Tensor":
        if isinstance(dtype, str):
            dtype = DTYPES[dtype]
        return Tensor(self.data.astype(dtype), name=self.name)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype.name}{tag})"


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Gradient accumulation is out-of-place and follows record order exactly,
    so backward results are deterministic for a fixed forward pass.  A tape
    may be consumed by :meth:`backward` once.  Independent evaluations on
    disjoint tapes are safe to run concurrently; the active-tape stack is
    thread-local.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple, object]] = []
        self._grads: dict[int, np.ndarray] | None = None
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def record(self, out: Tensor, inputs: tuple, backward) -> None:
        self._records.append((out, inputs, backward))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)=1 and replay the tape in reverse, accumulating gradients."""
        if self._consumed:
            raise ValidationError("tape already consumed by a previous backward()")
        if loss.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for tensor, grad in zip(inputs, backward(g)):
                if tensor is None or grad is None:
                    continue
                key = id(tensor)
                held = grads.get(key)
                # out-of-place: stored buffers are never mutated
                grads[key] = grad if held is None else held + grad
        self._grads = grads

    def gradient(self, t: Tensor) -> np.ndarray:
        """Accumulated gradient for ``t`` (zeros if the loss does not depend on it)."""
        if self._grads is None:
            raise ValidationError("backward() has not been called on this tape")
        g = self._grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    def gradients(self, named: dict[str, Tensor]) -> dict[str, np.ndarray]:
        return {name: self.gradient(t) for name, t in named.items()}
