"""Immutable tensor values and the reverse-mode tape that differentiates them.

A :class:`Tensor` wraps a read-only, row-major numpy array of ``float32`` or
``float64``.  Operations never mutate their inputs.  When a :class:`Tape` is
active on the current thread and at least one input participates in
differentiation, the operation appends a :class:`Node` to the tape; calling
:meth:`Tape.backward` then walks those nodes once each, in reverse order.

Example::

    x = Tensor(np.ones((2, 3)), dtype=np.float64, requires_grad=True)
    with Tape() as tape:
        y = ops.sum(x * x)
    grads = tape.backward(y)
    grads[x]  # -> 2 * x
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, NumericError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_ids = itertools.count(1)
_local = threading.local()


def _as_float_array(data, dtype) -> np.ndarray:
    if dtype is not None:
        arr = np.array(data, dtype=dtype)
    else:
        arr = np.array(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
    if arr.dtype not in FLOAT_DTYPES:
        raise ContractError(f"unsupported dtype {arr.dtype}; use float32 or float64")
    return arr


class Tensor:
    """An n-dimensional float array, optionally participating in a tape."""

    __slots__ = ("data", "requires_grad", "grad_id", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = _as_float_array(data, dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        _check_finite(arr, "Tensor")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad_id = next(_ids) if requires_grad else None

    @classmethod
    def _wrap(cls, arr: np.ndarray, op: str) -> "Tensor":
        # Internal constructor for op outputs: no copy, finiteness enforced.
        arr = np.asarray(arr)
        _check_finite(arr, op)
        if not arr.flags.c_contiguous:
            arr = arr.copy(order="C")
        arr.flags.writeable = False
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad_id = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Return the underlying read-only array."""
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, "detach")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.grad_id is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # Arithmetic delegates to the ops module; imported lazily to avoid a cycle.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.getitem(self, key)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def _not_scalar(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op}: produced non-finite values")


def as_tensor(x, dtype=None) -> Tensor:
    """Return ``x`` unchanged if it is a Tensor, else wrap it (no tape)."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


@dataclass
class Node:
    """One recorded operation.

    ``backward`` maps the output gradient to a tuple with one entry per
    input (``None`` for inputs that receive no gradient).
    """

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of differentiable operations for one forward pass.

    A tape is single-writer: it is bound to the thread that entered it.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise ContractError("tape exited out of order")
        stack.pop()

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> "Gradients":
        """Propagate from ``loss`` back through every recorded node.

        ``loss`` must be a single-element tensor unless an explicit ``seed``
        of matching shape is supplied.
        """
        if loss.grad_id is None:
            raise ContractError("loss does not participate in this tape")
        if seed is None:
            if loss.size != 1:
                raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
            seed = np.ones(loss.shape, dtype=loss.dtype)
        elif np.shape(seed) != loss.shape:
            raise ContractError(f"seed shape {np.shape(seed)} != loss shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.grad_id: np.asarray(seed, dtype=loss.dtype)}
        for node in reversed(self.nodes):
            g = grads.get(node.output.grad_id)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or inp.grad_id is None:
                    continue
                if gi.shape != inp.shape:
                    raise ContractError(
                        f"{node.op}: gradient shape {gi.shape} != input shape {inp.shape}"
                    )
                prev = grads.get(inp.grad_id)
                grads[inp.grad_id] = gi if prev is None else prev + gi
        return Gradients(grads)


class Gradients:
    """Gradient lookup keyed by tensor; missing entries are zeros."""

    def __init__(self, table: dict[int, np.ndarray]):
        self._table = table

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.grad_id is None:
            raise ContractError("tensor does not participate in differentiation")
        g = self._table.get(t.grad_id)
        if g is None:
            return np.zeros(t.shape, dtype=t.dtype)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return t.grad_id is not None and t.grad_id in self._table


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def record(
    op: str,
    out: np.ndarray,
    inputs: Iterable[Tensor],
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap ``out`` as a Tensor and register it on the active tape if needed.

    This is the extension point for new differentiable operations.
    """
    inputs = tuple(inputs)
    result = Tensor._wrap(out, op)
    tape = current_tape()
    if tape is not None and any(t.grad_id is not None for t in inputs):
        result.grad_id = next(_ids)
        tape.record(Node(op, inputs, result, backward))
    return result
