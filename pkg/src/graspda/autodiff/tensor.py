"""Dense tensors and the differentiation tape.

A :class:`Tape` records every operation whose inputs require gradients while
it is the active tape (``with Tape() as tape: ...``).  ``tape.backward(loss)``
walks the recording in reverse and returns a :class:`Gradients` mapping keyed
by tensor identity.  A tape may be consumed only once; a second ``backward``
raises instead of silently accumulating.
"""
from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

DTYPE = np.float64

_TAPE_STACK: list["Tape"] = []


class ContractViolation(ValueError):
    """Raised when operands violate an operation's shape or domain contract."""


class Tensor:
    """An n-dimensional float64 array with an optional link to a tape node."""

    __slots__ = ("data", "requires_grad", "name", "tape_id", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE) if not isinstance(data, np.ndarray) or data.dtype != DTYPE else data
        self.requires_grad = requires_grad
        self.name = name
        self.tape_id: tuple[int, int] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Gradients:
    """Mapping from tensors (by identity) to accumulated gradient arrays."""

    def __init__(self):
        self._grads: dict[int, np.ndarray] = {}
        self._tensors: dict[int, Tensor] = {}

    def _accumulate(self, t: Tensor, g: np.ndarray) -> None:
        key = id(t)
        if key in self._grads:
            self._grads[key] = self._grads[key] + g
        else:
            self._grads[key] = g
            self._tensors[key] = t

    def __getitem__(self, t: Tensor) -> np.ndarray:
        return self._grads[id(t)]

    def get(self, t: Tensor, default=None):
        return self._grads.get(id(t), default)

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def __len__(self) -> int:
        return len(self._grads)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._tensors.values())

    def items(self):
        for key, t in self._tensors.items():
            yield t, self._grads[key]


class Tape:
    """Append-only record of differentiable operations for one step."""

    _counter = 0

    def __init__(self):
        Tape._counter += 1
        self.uid = Tape._counter
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.remove(self)

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> None:
        if self.consumed:
            raise RuntimeError("tape already consumed by backward(); start a new Tape")
        out.tape_id = (self.uid, len(self.nodes))
        self.nodes.append(_Node(out, tuple(inputs), vjp))

    def backward(self, loss: Tensor) -> Gradients:
        """Reverse sweep from a scalar ``loss``; returns the gradient map."""
        if loss.data.size != 1:
            raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise RuntimeError("backward() already ran on this tape; gradients are not re-accumulated")
        self.consumed = True
        grads = Gradients()
        grads._accumulate(loss, np.ones_like(loss.data))
        for node in reversed(self.nodes):
            g = grads.get(node.out)
            if g is None:
                continue
            in_grads = node.vjp(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                grads._accumulate(inp, gi)
        return grads


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor) -> Gradients:
    """Run backward on the tape that recorded ``loss``."""
    tape = active_tape()
    if loss.tape_id is None or tape is None or tape.uid != loss.tape_id[0]:
        raise ContractViolation("loss is not attached to the active tape")
    return tape.backward(loss)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap an op result, recording it on the active tape when any input needs grad."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = active_tape()
        if tape is not None:
            tape.record(out, inputs, vjp)
        else:
            out.requires_grad = False
    return out
