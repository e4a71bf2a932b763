"""Dense tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a numpy array. Operations are `Function` subclasses: the
forward pass runs on raw arrays and, while gradient recording is enabled,
the output keeps a reference to the function that produced it. Calling
`backward` on a scalar builds a `Tape` (the reachable operations in
topological order) and replays the adjoints in reverse.
"""

from contextlib import contextmanager
from typing import Any, Iterator, Optional, Sequence, Union
import threading

import numpy as np

from utils.errors import ContractError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]

_DTYPES = {"float64": np.float64, "float32": np.float32}
_default_dtype: type = np.float64


def set_default_dtype(name: str) -> None:
    """Select the floating point precision for newly created tensors.

    64-bit is the default and what every tolerance in the test-suite assumes,
    32-bit is an opt-in speed mode.
    """
    global _default_dtype
    if name not in _DTYPES:
        raise ContractError(f"Unsupported dtype `{name}`, expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def get_default_dtype() -> type:
    return _default_dtype


class _GradMode(threading.local):
    enabled: bool = True


_grad_mode = _GradMode()


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend tape recording inside the block (inference, frozen teachers)."""
    previous = _grad_mode.enabled
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


def is_grad_enabled() -> bool:
    return _grad_mode.enabled


class Function:
    """Base class for differentiable operations.

    Subclasses implement `forward` on numpy arrays and `backward`, which maps
    the gradient of the output to one gradient per input (None where an input
    receives nothing). Anything needed by the adjoint is stashed on `self`
    during `forward`.
    """

    def __init__(self, *inputs: "Tensor") -> None:
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Any:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: ArrayLike, **kwargs: Any) -> "Tensor":
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, _creator=fn if requires_grad else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        """Sum out the axes numpy broadcasting added or stretched."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, extent in enumerate(shape):
            if extent == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """A dense float array that can take part in a differentiation tape."""

    __array_priority__ = 1000

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _creator: Optional[Function] = None,
    ) -> None:
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data)
        if array.dtype != _default_dtype:
            array = array.astype(_default_dtype)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._creator = _creator

    # -- introspection -------------------------------------------------
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
    def is_leaf(self) -> bool:
        return self._creator is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)

    # -- operators -----------------------------------------------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(other, self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return MatMul.apply(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return GetItem.apply(self, index=index)

    # -- method forms --------------------------------------------------
    def sum(self, axis: Optional[Union[int, tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=tuple(shape))

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=tuple(axes) if axes else None)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        order = list(range(self.ndim))
        order[a], order[b] = order[b], order[a]
        return self.transpose(tuple(order))

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def abs(self) -> "Tensor":
        return Abs.apply(self)


def as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


class Tape:
    """Ordered record of the operations reachable from a root tensor.

    Nodes are held in topological order (inputs before outputs); the order
    only depends on the graph structure, so replaying adjoints is
    deterministic for a fixed computation.
    """

    def __init__(self, root: Tensor) -> None:
        self.root = root
        self.nodes: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._creator is not None:
                for parent in reversed(node._creator.inputs):
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.nodes)

    def replay(self, seed: np.ndarray) -> dict[Tensor, np.ndarray]:
        """Propagate `seed` (d root / d root) back through the recorded ops."""
        grads: dict[int, np.ndarray] = {id(self.root): seed}
        leaves: dict[Tensor, np.ndarray] = {}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._creator is None:
                leaves[node] = grad
                continue
            parent_grads = node._creator.backward(grad)
            if not isinstance(parent_grads, tuple):
                parent_grads = (parent_grads,)
            for parent, parent_grad in zip(node._creator.inputs, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent_grad.shape != parent.shape:
                    raise ShapeError(
                        f"{type(node._creator).__name__} produced a gradient of the wrong shape",
                        parent_grad.shape,
                        parent.shape,
                    )
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad
        return leaves


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d loss / d leaf into every reachable leaf's `.grad`.

    Calling it twice without `zero_grad` adds the gradients together, the
    same accumulation contract optimizers rely on.

    Returns
    -------
    dict[Tensor, np.ndarray]
        The gradients contributed by this call, keyed by leaf tensor.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    tape = Tape(loss)
    leaves = tape.replay(np.ones_like(loss.data))
    for leaf, grad in leaves.items():
        leaf.grad = grad.copy() if leaf.grad is None else leaf.grad + grad
    return leaves


# -- elementwise arithmetic ---------------------------------------------


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        return self.unbroadcast(grad, a.shape), self.unbroadcast(grad, b.shape)


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a - b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        return self.unbroadcast(grad, a.shape), self.unbroadcast(-grad, b.shape)


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        return (
            self.unbroadcast(grad * b.data, a.shape),
            self.unbroadcast(grad * a.data, b.shape),
        )


class Div(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a / b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        return (
            self.unbroadcast(grad / b.data, a.shape),
            self.unbroadcast(-grad * a.data / (b.data * b.data), b.shape),
        )


class Neg(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return -a

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return -grad


class Pow(Function):
    def forward(self, a: np.ndarray, exponent: float) -> np.ndarray:
        self.exponent = exponent
        return np.power(a, exponent)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        a = self.inputs[0].data
        return grad * self.exponent * np.power(a, self.exponent - 1.0)


class Exp(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.out = np.exp(a)
        return self.out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self.out


class Log(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return np.log(a)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad / self.inputs[0].data


class Abs(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return np.abs(a)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * np.sign(self.inputs[0].data)


# -- reductions and shape ----------------------------------------------


class Sum(Function):
    def forward(
        self,
        a: np.ndarray,
        axis: Optional[Union[int, tuple[int, ...]]] = None,
        keepdims: bool = False,
    ) -> np.ndarray:
        self.axis = axis
        self.keepdims = keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        shape = self.inputs[0].shape
        if self.axis is not None and not self.keepdims:
            axes = self.axis if isinstance(self.axis, tuple) else (self.axis,)
            axes = tuple(ax % len(shape) for ax in axes)
            grad = np.expand_dims(grad, axes)
        return np.broadcast_to(grad, shape).copy()


def mean(
    x: Tensor, axis: Optional[Union[int, tuple[int, ...]]] = None, keepdims: bool = False
) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[ax] for ax in axes]))
    return Sum.apply(x, axis=axis, keepdims=keepdims) * (1.0 / count)


class Reshape(Function):
    def forward(self, a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        try:
            return a.reshape(shape)
        except ValueError as e:
            raise ShapeError(f"Cannot reshape to {shape}", a.shape) from e

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad.reshape(self.inputs[0].shape)


class Transpose(Function):
    def forward(self, a: np.ndarray, axes: Optional[tuple[int, ...]] = None) -> np.ndarray:
        self.axes = axes if axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return np.transpose(grad, np.argsort(self.axes))


class GetItem(Function):
    def forward(self, a: np.ndarray, index: Any) -> np.ndarray:
        self.index = index
        return a[index]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        out = np.zeros_like(self.inputs[0].data)
        np.add.at(out, self.index, grad)
        return out


class MatMul(Function):
    """Batched matrix product `[..., m, k] @ [..., k, n]` with broadcast batch dims."""

    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul needs [...,m,k] @ [...,k,n]", a.shape, b.shape)
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError as e:
            raise ShapeError("matmul batch dimensions do not broadcast", a.shape, b.shape) from e
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        grad_a = np.matmul(grad, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), grad)
        return self.unbroadcast(grad_a, a.shape), self.unbroadcast(grad_b, b.shape)


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return MatMul.apply(a, b)
