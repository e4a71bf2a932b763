"""Activations, normalizations and tensor plumbing built on `Function`."""

from typing import Any, Optional, Sequence, Union

import numpy as np

from utils.errors import ConfigurationError, ShapeError
from .tensor import (
    ArrayLike,
    Function,
    Tensor,
    as_tensor,
    mean,
)


def _axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"Axis {axis} out of range for a rank-{ndim} tensor")
    return axis % ndim


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- activations --------------------------------------------------------


class Relu(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self.mask


class Sigmoid(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.out = _sigmoid(a)
        return self.out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self.out * (1.0 - self.out)


class Tanh(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * (1.0 - self.out * self.out)


class Swish(Function):
    """x * sigmoid(x)."""

    def forward(self, a: np.ndarray) -> np.ndarray:
        self.sig = _sigmoid(a)
        return a * self.sig

    def backward(self, grad: np.ndarray) -> np.ndarray:
        a = self.inputs[0].data
        return grad * (self.sig + a * self.sig * (1.0 - self.sig))


class Glu(Function):
    """Gated linear unit: first half times sigmoid of the second half."""

    def forward(self, a: np.ndarray, axis: int = -1) -> np.ndarray:
        self.axis = _axis(axis, a.ndim)
        extent = a.shape[self.axis]
        if extent % 2:
            raise ShapeError(f"glu needs an even extent on axis {axis}, got {extent}", a.shape)
        self.first, self.second = np.split(a, 2, axis=self.axis)
        self.gate = _sigmoid(self.second)
        return self.first * self.gate

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad_first = grad * self.gate
        grad_second = grad * self.first * self.gate * (1.0 - self.gate)
        return np.concatenate([grad_first, grad_second], axis=self.axis)


def relu(x: ArrayLike) -> Tensor:
    return Relu.apply(x)


def sigmoid(x: ArrayLike) -> Tensor:
    return Sigmoid.apply(x)


def tanh(x: ArrayLike) -> Tensor:
    return Tanh.apply(x)


def swish(x: ArrayLike) -> Tensor:
    return Swish.apply(x)


def glu(x: ArrayLike, axis: int = -1) -> Tensor:
    return Glu.apply(x, axis=axis)


# -- softmax family -----------------------------------------------------


class Softmax(Function):
    def forward(self, a: np.ndarray, axis: int = -1) -> np.ndarray:
        self.axis = _axis(axis, a.ndim)
        shifted = a - np.max(a, axis=self.axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / np.sum(e, axis=self.axis, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        inner = np.sum(grad * self.out, axis=self.axis, keepdims=True)
        return self.out * (grad - inner)


class LogSoftmax(Function):
    def forward(self, a: np.ndarray, axis: int = -1) -> np.ndarray:
        self.axis = _axis(axis, a.ndim)
        shifted = a - np.max(a, axis=self.axis, keepdims=True)
        log_norm = np.log(np.sum(np.exp(shifted), axis=self.axis, keepdims=True))
        out = shifted - log_norm
        self.probs = np.exp(out)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad - self.probs * np.sum(grad, axis=self.axis, keepdims=True)


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def log_softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def logsumexp(values: np.ndarray, axis: Optional[int] = None) -> np.ndarray:
    """Plain numpy log-sum-exp that tolerates all -inf slices."""
    peak = np.max(values, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    total = np.log(np.sum(np.exp(values - peak), axis=axis, keepdims=True)) + peak
    if axis is None:
        return total.reshape(())
    return np.squeeze(total, axis=axis)


# -- arithmetic helpers -------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    return as_tensor(a) + b


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    return as_tensor(a) * b


def scale(x: ArrayLike, factor: float) -> Tensor:
    return as_tensor(x) * float(factor)


def sum(x: ArrayLike, axis: Optional[Union[int, tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return as_tensor(x).sum(axis=axis, keepdims=keepdims)


def l1_distance(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Mean absolute difference over every element."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("l1_distance needs equal shapes", a.shape, b.shape)
    return mean((a - b).abs())


# -- normalization and regularization ------------------------------------


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis then apply the affine `gain`/`bias`."""
    centred = x - mean(x, axis=-1, keepdims=True)
    variance = mean(centred * centred, axis=-1, keepdims=True)
    return centred * (variance + eps) ** -0.5 * gain + bias


def batch_norm(
    x: Tensor,
    gain: Tensor,
    bias: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Batch normalization over every axis except the channel axis 1.

    In training mode statistics come from the batch (restricted to positions
    where `mask` is true) and the running buffers are updated in place; in
    eval mode the running buffers are used as constants.

    Parameters
    ----------
    mask: np.ndarray, optional
        Boolean array broadcastable to `x` with extent 1 on the channel axis.
    """
    channels = x.shape[1]
    view = (1, channels) + (1,) * (x.ndim - 2)
    if not training:
        normalized = (x - running_mean.reshape(view)) * ((running_var.reshape(view) + eps) ** -0.5)
        return normalized * gain.reshape(view) + bias.reshape(view)

    axes = (0,) + tuple(range(2, x.ndim))
    if mask is None:
        weights = np.ones((x.shape[0], 1) + x.shape[2:], dtype=x.data.dtype)
    else:
        weights = np.broadcast_to(mask, (x.shape[0], 1) + x.shape[2:]).astype(x.data.dtype)
    count = float(weights.sum())
    if count < 1:
        raise ShapeError("batch_norm received no valid positions", x.shape)
    batch_mean = (x * weights).sum(axis=axes, keepdims=True) * (1.0 / count)
    centred = x - batch_mean
    batch_var = (centred * centred * weights).sum(axis=axes, keepdims=True) * (1.0 / count)
    normalized = centred * (batch_var + eps) ** -0.5

    unbiased = count / max(count - 1.0, 1.0)
    running_mean *= 1.0 - momentum
    running_mean += momentum * batch_mean.data.reshape(channels)
    running_var *= 1.0 - momentum
    running_var += momentum * unbiased * batch_var.data.reshape(channels)
    return normalized * gain.reshape(view) + bias.reshape(view)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"Dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return x * keep


# -- plumbing -----------------------------------------------------------


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int = 0) -> np.ndarray:
        self.axis = _axis(axis, arrays[0].ndim)
        self.sizes = [a.shape[self.axis] for a in arrays]
        return np.concatenate(arrays, axis=self.axis)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, ...]:
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


class Pad(Function):
    def forward(self, a: np.ndarray, pad_width: tuple[tuple[int, int], ...]) -> np.ndarray:
        self.pad_width = pad_width
        return np.pad(a, pad_width)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        index = tuple(slice(lo, grad.shape[i] - hi) for i, (lo, hi) in enumerate(self.pad_width))
        return grad[index]


def pad(x: ArrayLike, pad_width: Sequence[tuple[int, int]]) -> Tensor:
    return Pad.apply(x, pad_width=tuple(tuple(p) for p in pad_width))


class Where(Function):
    def forward(self, a: np.ndarray, b: np.ndarray, condition: np.ndarray) -> np.ndarray:
        self.condition = condition
        return np.where(condition, a, b)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        zero = np.zeros_like(grad)
        return (
            self.unbroadcast(np.where(self.condition, grad, zero), a.shape),
            self.unbroadcast(np.where(self.condition, zero, grad), b.shape),
        )


def where(condition: np.ndarray, a: ArrayLike, b: ArrayLike) -> Tensor:
    return Where.apply(a, b, condition=np.asarray(condition, dtype=bool))


def masked_fill(x: ArrayLike, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where `mask` is true by the constant `value`."""
    return where(~np.asarray(mask, dtype=bool), x, value)


class Take(Function):
    """Row gather `table[indices]`, the embedding lookup."""

    def forward(self, table: np.ndarray, indices: np.ndarray) -> np.ndarray:
        self.indices = indices
        return table[indices]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        out = np.zeros_like(self.inputs[0].data)
        np.add.at(out, self.indices, grad)
        return out


def take(table: ArrayLike, indices: np.ndarray) -> Tensor:
    return Take.apply(table, indices=np.asarray(indices, dtype=np.int64))


class TakeAlongLast(Function):
    """Pick one entry per row along the last axis."""

    def forward(self, a: np.ndarray, index: np.ndarray) -> np.ndarray:
        if index.shape != a.shape[:-1]:
            raise ShapeError("take_along_last index must match the leading axes", a.shape, index.shape)
        self.index = index[..., None]
        return np.take_along_axis(a, self.index, axis=-1)[..., 0]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        out = np.zeros_like(self.inputs[0].data)
        np.put_along_axis(out, self.index, grad[..., None], axis=-1)
        return out


def take_along_last(x: ArrayLike, index: np.ndarray) -> Tensor:
    return TakeAlongLast.apply(x, index=np.asarray(index, dtype=np.int64))


class Einsum(Function):
    """Two-operand contraction with explicit output subscripts."""

    def forward(self, a: np.ndarray, b: np.ndarray, spec: str) -> np.ndarray:
        inputs, self.out_spec = spec.replace(" ", "").split("->")
        self.a_spec, self.b_spec = inputs.split(",")
        for own, other in ((self.a_spec, self.b_spec), (self.b_spec, self.a_spec)):
            if len(set(own)) != len(own):
                raise ShapeError(f"einsum spec `{spec}` repeats an index inside one operand")
            stray = set(own) - set(other) - set(self.out_spec)
            if stray:
                raise ShapeError(f"einsum spec `{spec}` reduces {sorted(stray)} from a single operand")
        try:
            return np.einsum(spec, a, b, optimize=True)
        except ValueError as e:
            raise ShapeError(f"einsum `{spec}` cannot combine operands", a.shape, b.shape) from e

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.inputs
        grad_a = np.einsum(f"{self.out_spec},{self.b_spec}->{self.a_spec}", grad, b.data, optimize=True)
        grad_b = np.einsum(f"{self.out_spec},{self.a_spec}->{self.b_spec}", grad, a.data, optimize=True)
        return grad_a, grad_b


def einsum(spec: str, a: ArrayLike, b: ArrayLike) -> Tensor:
    return Einsum.apply(a, b, spec=spec)


def stack_arrays(arrays: Sequence[np.ndarray], pad_value: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad arrays with leading time axis to a common length.

    Returns the padded batch `[B, T_max, ...]` and the per-row lengths.
    """
    lengths = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    t_max = int(lengths.max()) if len(lengths) else 0
    trailing = arrays[0].shape[1:] if arrays else ()
    out = np.full((len(arrays), t_max) + trailing, pad_value, dtype=arrays[0].dtype if arrays else float)
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
    return out, lengths


def length_mask(lengths: Any, t_max: int) -> np.ndarray:
    """Boolean `[B, T]` mask, true on valid frames."""
    lengths = np.asarray(lengths, dtype=np.int64)
    return np.arange(t_max)[None, :] < lengths[:, None]
