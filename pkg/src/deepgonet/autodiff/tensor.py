"""Reverse-mode autodiff over numpy arrays.

Each op builds an output Tensor holding its parents and a closure that,
given the output gradient, accumulates into the parents' ``grad``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError

DEFAULT_DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward=None, op: str = ""):
        if not isinstance(data, np.ndarray) or not np.issubdtype(data.dtype, np.floating):
            data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op!r})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if id(p) not in seen)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # elementwise arithmetic; broadcasting is limited to numpy's rules and
    # gradients are summed back to the operand shape
    def __add__(self, other) -> Tensor:
        other = as_tensor(other, self.dtype)
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))
        return Tensor(out_data, _parents=(self, other), _backward=backward, op="add")

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        def backward(g):
            self._accumulate(-g)
        return Tensor(-self.data, _parents=(self,), _backward=backward, op="neg")

    def __sub__(self, other) -> Tensor:
        return self + (-as_tensor(other, self.dtype))

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other) -> Tensor:
        other = as_tensor(other, self.dtype)

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))
        return Tensor(self.data * other.data, _parents=(self, other), _backward=backward, op="mul")

    __rmul__ = __mul__

    def __matmul__(self, other) -> Tensor:
        return matmul(self, other)

    def sum(self) -> Tensor:
        def backward(g):
            self._accumulate(np.broadcast_to(g, self.shape))
        return Tensor(np.asarray(self.data.sum(), dtype=self.dtype), _parents=(self,),
                      _backward=backward, op="sum")

    def mean(self) -> Tensor:
        return self.sum() * (1.0 / self.data.size)

    def relu(self) -> Tensor:
        return relu(self)

    def sigmoid(self) -> Tensor:
        return sigmoid(self)

    def tanh(self) -> Tensor:
        return tanh(self)


class Parameter(Tensor):
    """Named leaf tensor that always carries gradient storage."""

    __slots__ = ("name",)

    def __init__(self, data: np.ndarray, name: str):
        super().__init__(np.asarray(data), requires_grad=True, op="param")
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched-left matmul: a (..., F) @ b (F, O)."""
    a, b = as_tensor(a), as_tensor(b, a.dtype)
    if b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
    return Tensor(a.data @ b.data, _parents=(a, b), _backward=backward, op="matmul")


def relu(x: Tensor) -> Tensor:
    on = x.data > 0

    def backward(g):
        x._accumulate(g * on)
    # np.maximum keeps NaN, so a diverged upstream still reaches the loss check
    return Tensor(np.maximum(x.data, 0).astype(x.dtype, copy=False), _parents=(x,),
                  _backward=backward, op="relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    s = 0.5 * (1.0 + np.tanh(0.5 * z))
    # keep the output strictly inside (0, 1) at the working precision
    eps = np.finfo(z.dtype).epsneg
    return np.clip(s, np.finfo(z.dtype).tiny, 1.0 - eps).astype(z.dtype, copy=False)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def backward(g):
        x._accumulate(g * s * (1.0 - s))
    return Tensor(s, _parents=(x,), _backward=backward, op="sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - t * t))
    return Tensor(t, _parents=(x,), _backward=backward, op="tanh")


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].data.ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  _parents=tuple(tensors), _backward=backward, op="concat")
