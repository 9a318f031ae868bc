from __future__ import annotations

"""
tensor.py
─────────
Dense tensors with reverse-mode differentiation.

Every differentiable op is a `Function` subclass: `forward` works on raw numpy
arrays, `backward` maps the output gradient to one gradient per input.
`Function.apply` wires the result into the graph and stamps the node with a
global sequence number, so `Tensor.backward` can visit nodes in exact reverse
execution order.

A `Tape` is optional. While one is active it records executed nodes and keeps
a running count of live tensor bytes (tensor data, arrays saved for backward,
gradient buffers). Bytes are released when the owning tensor is collected,
which keeps `peak_bytes` deterministic under CPython's reference counting.
"""

import itertools
import threading
import weakref
from contextlib import contextmanager
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .errors import ByteBudgetExceeded, GradientError, NonFiniteError, ShapeError


class _Context(threading.local):
    def __init__(self) -> None:
        self.grad_enabled = True
        self.tape: Tape | None = None
        self.dtype = np.dtype(np.float32)


_ctx = _Context()
_sequence = itertools.count()


def get_default_dtype() -> np.dtype:
    return _ctx.dtype


@contextmanager
def default_dtype(dtype: Any) -> Iterator[None]:
    """Switch the dtype used for new parameters and constants (float64 for gradient checks)."""
    previous = _ctx.dtype
    _ctx.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _ctx.dtype = previous


@contextmanager
def no_grad() -> Iterator[None]:
    previous = _ctx.grad_enabled
    _ctx.grad_enabled = False
    try:
        yield
    finally:
        _ctx.grad_enabled = previous


def is_grad_enabled() -> bool:
    return _ctx.grad_enabled


def current_tape() -> Tape | None:
    return _ctx.tape


# ──────────────────────────────────────────────────────────────────────────────
# Tape
# ──────────────────────────────────────────────────────────────────────────────

class Tape:
    def __init__(self, byte_budget: int | None = None) -> None:
        self.records: list[Function] = []
        self.live_bytes = 0
        self.peak_bytes = 0
        self.flops = 0
        self.byte_budget = byte_budget
        self._outer: Tape | None = None

    def __enter__(self) -> Tape:
        self._outer = _ctx.tape
        _ctx.tape = self
        return self

    def __exit__(self, *exc: object) -> None:
        _ctx.tape = self._outer
        self._outer = None

    def alloc(self, nbytes: int) -> None:
        self.live_bytes += nbytes
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes
            if self.byte_budget is not None and self.peak_bytes > self.byte_budget:
                raise ByteBudgetExceeded(self.peak_bytes, self.byte_budget)

    def release(self, nbytes: int) -> None:
        self.live_bytes -= nbytes

    def track(self, tensor: Tensor) -> None:
        nbytes = tensor.data.nbytes
        self.alloc(nbytes)
        weakref.finalize(tensor, self.release, nbytes)

    def adopt(self, arrays: Iterable[np.ndarray]) -> None:
        """Count long-lived buffers (parameters, optimizer moments) created outside the tape."""
        for arr in arrays:
            self.alloc(arr.nbytes)


def _alloc(nbytes: int) -> None:
    if _ctx.tape is not None:
        _ctx.tape.alloc(nbytes)


def _release(nbytes: int) -> None:
    if _ctx.tape is not None:
        _ctx.tape.release(nbytes)


def count_flops(n: int) -> None:
    if _ctx.tape is not None:
        _ctx.tape.flops += int(n)


# ──────────────────────────────────────────────────────────────────────────────
# Tensor
# ──────────────────────────────────────────────────────────────────────────────

class Tensor:
    __array_priority__ = 1000

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Any = None, name: str = ""):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            else:
                dtype = _ctx.dtype
        arr = np.array(data, dtype=dtype, copy=True, order="C")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._creator: Function | None = None
        if _ctx.tape is not None:
            _ctx.tape.track(self)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> Tensor:
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = ""
        t._creator = None
        if _ctx.tape is not None:
            _ctx.tape.track(t)
        return t

    # --- introspection
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # --- arithmetic
    def __add__(self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return Add.apply(self, other)
        return Shift.apply(self, value=float(other))

    __radd__ = __add__

    def __sub__(self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return Sub.apply(self, other)
        return Shift.apply(self, value=-float(other))

    def __rsub__(self, other: float) -> Tensor:
        return Shift.apply(Scale.apply(self, factor=-1.0), value=float(other))

    def __mul__(self, other: Tensor | float) -> Tensor:
        if isinstance(other, Tensor):
            return Mul.apply(self, other)
        return Scale.apply(self, factor=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> Tensor:
        return Scale.apply(self, factor=1.0 / float(other))

    def __neg__(self) -> Tensor:
        return Scale.apply(self, factor=-1.0)

    def sum(self) -> Tensor:
        return Sum.apply(self)

    def mean(self) -> Tensor:
        return Mean.apply(self)

    # --- differentiation
    def backward(self, grad: np.ndarray | None = None) -> None:
        if not self.requires_grad:
            raise GradientError("backward called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise GradientError("backward needs an explicit gradient for non-scalar tensors")
            grad = np.ones_like(self.data)
        elif grad.shape != self.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")
        if self._creator is None:
            self._accumulate(np.asarray(grad, dtype=self.dtype))
            return
        _run_backward(self._creator, np.asarray(grad, dtype=self.dtype))

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.dtype, copy=True)
            _alloc(self.grad.nbytes)
        else:
            self.grad = self.grad + grad


def as_tensor(x: Tensor | np.ndarray) -> Tensor:
    """Constant tensor view of an array; tensors pass through unchanged."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _run_backward(root: Function, grad: np.ndarray) -> None:
    nodes: dict[int, Function] = {}
    stack = [root]
    while stack:
        fn = stack.pop()
        if fn.seq in nodes:
            continue
        nodes[fn.seq] = fn
        for t in fn.inputs:
            if t.requires_grad and t._creator is not None:
                stack.append(t._creator)

    pending: dict[int, np.ndarray] = {root.seq: grad}
    _alloc(grad.nbytes)
    for seq in sorted(nodes, reverse=True):
        fn = nodes[seq]
        g = pending.pop(seq, None)
        if g is None:
            fn.release()
            continue
        grads = fn.backward(g)
        _release(g.nbytes)
        for t, gi in zip(fn.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if t._creator is None:
                t._accumulate(gi)
                continue
            key = t._creator.seq
            if key in pending:
                pending[key] = pending[key] + gi
            else:
                pending[key] = gi
                _alloc(gi.nbytes)
        fn.release()


# ──────────────────────────────────────────────────────────────────────────────
# Function
# ──────────────────────────────────────────────────────────────────────────────

class Function:
    def __init__(self, *inputs: Tensor) -> None:
        self.inputs: tuple[Tensor, ...] = inputs
        self.saved: dict[str, np.ndarray] = {}
        self.needs_grad = False
        self.seq = -1
        self._saved_bytes = 0
        self._tape: Tape | None = None

    def save(self, **arrays: np.ndarray) -> None:
        """Keep arrays for backward. Only arrays that are new allocations count as live bytes."""
        if not self.needs_grad:
            return
        for name, arr in arrays.items():
            self.saved[name] = arr
            if self._tape is not None and not any(np.may_share_memory(arr, t.data) for t in self.inputs):
                self._tape.alloc(arr.nbytes)
                self._saved_bytes += arr.nbytes

    def release(self) -> None:
        if self._tape is not None and self._saved_bytes:
            self._tape.release(self._saved_bytes)
        self._saved_bytes = 0
        self.saved = {}
        self.inputs = ()

    def wants(self, i: int) -> bool:
        return self.needs_grad and self.inputs[i].requires_grad

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs: Any) -> Tensor:
        for t in inputs:
            if not isinstance(t, Tensor):
                raise TypeError(f"{cls.__name__} expects Tensor inputs, got {type(t).__name__}")
        fn = cls(*inputs)
        fn.needs_grad = _ctx.grad_enabled and any(t.requires_grad for t in inputs)
        fn._tape = _ctx.tape if fn.needs_grad else None
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        if not np.all(np.isfinite(out)):
            fn.release()
            raise NonFiniteError(f"{cls.__name__} produced NaN or Inf")
        result = Tensor._wrap(out, requires_grad=fn.needs_grad)
        if fn.needs_grad:
            fn.seq = next(_sequence)
            result._creator = fn
            if fn._tape is not None:
                fn._tape.records.append(fn)
        else:
            fn.inputs = ()
        return result


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ──────────────────────────────────────────────────────────────────────────────
# Elementary arithmetic (same-shape only: no broadcasting)
# ──────────────────────────────────────────────────────────────────────────────

class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(a, b, "add")
        count_flops(a.size)
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, grad


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(a, b, "sub")
        count_flops(a.size)
        return a - b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return grad, -grad


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        _same_shape(a, b, "hadamard")
        count_flops(a.size)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
        ga = grad * self.b if self.wants(0) else None
        gb = grad * self.a if self.wants(1) else None
        return ga, gb


class Scale(Function):
    def forward(self, a: np.ndarray, *, factor: float) -> np.ndarray:
        self.factor = factor
        return a * np.asarray(factor, dtype=a.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * np.asarray(self.factor, dtype=grad.dtype),)


class Shift(Function):
    def forward(self, a: np.ndarray, *, value: float) -> np.ndarray:
        return a + np.asarray(value, dtype=a.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad,)


class Sum(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.shape = a.shape
        return np.asarray(a.sum(), dtype=a.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.full(self.shape, grad, dtype=grad.dtype),)


class Mean(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.shape = a.shape
        return np.asarray(a.mean(), dtype=a.dtype)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        n = max(1, int(np.prod(self.shape)))
        return (np.full(self.shape, grad / n, dtype=grad.dtype),)
