"""Dense tensors with a small reverse-mode differentiation engine.

Every operation that produces a :class:`Tensor` from other tensors records its
parents and a ``_backward`` closure. :meth:`Tensor.backward` walks the graph in
reverse topological order and accumulates gradients into every tensor that
``requires_grad``. Values default to 32-bit reals; float64 tensors are only
created explicitly, for gradient verification.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from ..constants import DTYPE
from ..errors import DimensionError, NonFiniteError

Number = Union[int, float]

_MAX_RANK = 4
_state = threading.local()


def is_grad_enabled() -> bool:
    """Return ``True`` when new operations record gradients on this thread."""
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable gradient recording for the enclosed block (thread-local)."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """A dense array plus an optional gradient buffer of the same shape."""

    def __init__(
        self,
        data: Union[np.ndarray, Sequence, Number],
        requires_grad: bool = False,
        dtype: Optional[np.dtype] = None,
    ) -> None:
        array = np.array(data, dtype=dtype or DTYPE)
        if array.ndim > _MAX_RANK:
            raise DimensionError(f"tensor rank {array.ndim} exceeds {_MAX_RANK}")
        if any(dim < 1 for dim in array.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {array.shape}")
        self.data: np.ndarray = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = ""

    @classmethod
    def _result(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        op: str,
    ) -> "Tensor":
        """Wrap an op result without copying; link parents when recording."""
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(data)
        out.grad = None
        out._op = op
        out._backward = None
        tracked = tuple(p for p in parents if p.requires_grad)
        if tracked and is_grad_enabled():
            out.requires_grad = True
            out._parents = tracked
        else:
            out.requires_grad = False
            out._parents = ()
        return out

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def check_finite(self, name: str) -> None:
        if not self.is_finite():
            raise NonFiniteError(f"non-finite values in tensor '{name}'", {"tensor": name})

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -------------------------------------------------------------- autograd
    def _accumulate(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            grad = grad.reshape(self.data.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Back-propagate from this tensor into every tracked ancestor."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a gradient requires a scalar tensor")
            grad = np.ones_like(self.data)

        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))

        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue
            if node._backward is None:
                node._accumulate(node_grad)
                continue
            for parent, parent_grad in node._backward(node_grad):
                if parent_grad is None:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = np.asarray(parent_grad, dtype=parent.data.dtype)

    # ------------------------------------------------------------ arithmetic
    def _check_same_shape(self, other: "Tensor", op: str) -> None:
        if other.shape != self.shape:
            raise DimensionError(f"{op}: shape mismatch {self.shape} vs {other.shape}")

    def __add__(self, other: Union["Tensor", Number]) -> "Tensor":
        if isinstance(other, Tensor):
            self._check_same_shape(other, "add")
            out = Tensor._result(self.data + other.data, (self, other), "add")
            out._backward = lambda g: ((self, g), (other, g))
        else:
            out = Tensor._result(self.data + self.data.dtype.type(other), (self,), "add")
            out._backward = lambda g: ((self, g),)
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor._result(-self.data, (self,), "neg")
        out._backward = lambda g: ((self, -g),)
        return out

    def __sub__(self, other: Union["Tensor", Number]) -> "Tensor":
        return self + (-other)

    def __rsub__(self, other: Number) -> "Tensor":
        return (-self) + other

    def __mul__(self, other: Union["Tensor", Number]) -> "Tensor":
        if isinstance(other, Tensor):
            self._check_same_shape(other, "mul")
            out = Tensor._result(self.data * other.data, (self, other), "mul")
            out._backward = lambda g: ((self, g * other.data), (other, g * self.data))
        else:
            scale = self.data.dtype.type(other)
            out = Tensor._result(self.data * scale, (self,), "mul")
            out._backward = lambda g: ((self, g * scale),)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other: Number) -> "Tensor":
        return self * (1.0 / other)

    def sum(self) -> "Tensor":
        out = Tensor._result(np.asarray(self.data.sum(), dtype=self.data.dtype), (self,), "sum")
        out._backward = lambda g: ((self, np.broadcast_to(g, self.data.shape)),)
        return out

    def mean(self) -> "Tensor":
        count = self.data.size
        out = Tensor._result(np.asarray(self.data.mean(), dtype=self.data.dtype), (self,), "mean")
        out._backward = lambda g: ((self, np.broadcast_to(g / count, self.data.shape)),)
        return out


def first_non_finite(named: Sequence[tuple[str, Tensor]]) -> Optional[str]:
    """Return the name of the first tensor holding NaN/Inf, if any."""
    for name, tensor in named:
        if not tensor.is_finite():
            return name
    return None


# ---------------------------------------------------------------- gradcheck
def numerical_gradient(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    index: int,
    eps: float = 1e-6,
) -> np.ndarray:
    """Central finite differences of scalar ``fn(*inputs)`` w.r.t. ``inputs[index]``."""
    target = inputs[index]
    grad = np.zeros(target.shape, dtype=np.float64)
    flat = target.data.reshape(-1)
    with no_grad():
        for position in range(flat.size):
            saved = flat[position]
            flat[position] = saved + eps
            upper = float(fn(*inputs).data)
            flat[position] = saved - eps
            lower = float(fn(*inputs).data)
            flat[position] = saved
            grad.reshape(-1)[position] = (upper - lower) / (2.0 * eps)
    return grad


def analytic_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for tensor in inputs:
        tensor.requires_grad = True
        tensor.zero_grad()
    fn(*inputs).backward()
    return [
        np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in inputs
    ]


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    atol: float = 1e-6,
    rtol: float = 1e-3,
) -> bool:
    """Compare analytic and numerical gradients elementwise for every input."""
    analytic = analytic_gradients(fn, inputs)
    for index, expected in enumerate(analytic):
        numeric = numerical_gradient(fn, inputs, index, eps)
        if not np.allclose(expected, numeric, atol=atol, rtol=rtol):
            return False
    return True


def directional_error(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    direction_seed: int = 0,
    eps: float = 1e-3,
) -> float:
    """Relative error between the analytic and finite-difference slope along a random direction.

    Works at the inputs' own precision, so it is the float32 companion of
    :func:`gradcheck`.
    """
    analytic = analytic_gradients(fn, inputs)
    rng = np.random.default_rng(direction_seed)
    directions = [rng.standard_normal(t.shape) for t in inputs]
    norm = np.sqrt(sum(float((d**2).sum()) for d in directions))
    directions = [d / norm for d in directions]
    slope = sum(float((g * d).sum()) for g, d in zip(analytic, directions))

    originals = [t.data.copy() for t in inputs]
    with no_grad():
        for tensor, original, d in zip(inputs, originals, directions):
            tensor.data[...] = original + eps * d
        upper = float(fn(*inputs).data)
        for tensor, original, d in zip(inputs, originals, directions):
            tensor.data[...] = original - eps * d
        lower = float(fn(*inputs).data)
        for tensor, original in zip(inputs, originals):
            tensor.data[...] = original
    numeric = (upper - lower) / (2.0 * eps)
    return abs(slope - numeric) / max(abs(slope), abs(numeric), 1e-12)
