"""Direct (offset-loop) convolution and pooling for 1D, 2D and 3D inputs.

Every op walks the kernel offsets and applies one strided slice of the
padded input per offset, so no im2col buffer is materialised and the
backward pass scatters into the same slices.
"""

from typing import Sequence, Union

import numpy as np

from utils.errors import ConfigurationError, ShapeError
from .tensor import ArrayLike, Function, Tensor

IntOrTuple = Union[int, Sequence[int]]


def _expand(value: IntOrTuple, dims: int, what: str) -> tuple[int, ...]:
    if isinstance(value, int):
        return (value,) * dims
    value = tuple(int(v) for v in value)
    if len(value) != dims:
        raise ConfigurationError(f"{what} needs {dims} entries, got {value}")
    return value


def output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    """floor((in + 2*pad - k) / stride) + 1."""
    return (size + 2 * padding - kernel) // stride + 1


def _output_sizes(
    spatial: tuple[int, ...], kernel: tuple[int, ...], stride: tuple[int, ...], padding: tuple[int, ...], op: str
) -> tuple[int, ...]:
    sizes = tuple(output_extent(n, k, s, p) for n, k, s, p in zip(spatial, kernel, stride, padding))
    if any(n <= 0 for n in sizes):
        raise ConfigurationError(
            f"{op} output extent would be {sizes} for input {spatial}, "
            f"kernel {kernel}, stride {stride}, padding {padding}"
        )
    return sizes


def _window(offset: tuple[int, ...], stride: tuple[int, ...], sizes: tuple[int, ...]) -> tuple[slice, ...]:
    return tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, sizes))


class Conv(Function):
    """Grouped N-d cross-correlation, `x: [B, C_in, *S]`, `w: [C_out, C_in/groups, *K]`."""

    def forward(
        self,
        x: np.ndarray,
        w: np.ndarray,
        stride: tuple[int, ...],
        padding: tuple[int, ...],
        groups: int,
    ) -> np.ndarray:
        dims = w.ndim - 2
        batch, c_in = x.shape[:2]
        c_out = w.shape[0]
        if c_in % groups or c_out % groups:
            raise ConfigurationError(f"Channels {c_in}->{c_out} are not divisible by groups={groups}")
        if w.shape[1] != c_in // groups:
            raise ShapeError("Kernel input channels do not match the input", x.shape, w.shape)
        self.dims, self.stride, self.padding, self.groups = dims, stride, padding, groups
        kernel = w.shape[2:]
        self.sizes = _output_sizes(x.shape[2:], kernel, stride, padding, "conv")

        xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding])
        self.xg = xp.reshape((batch, groups, c_in // groups) + xp.shape[2:])
        self.wg = w.reshape((groups, c_out // groups, c_in // groups) + kernel)
        out = np.zeros((batch, groups, c_out // groups) + self.sizes, dtype=x.dtype)
        lead = (slice(None),) * 3
        for offset in np.ndindex(*kernel):
            patch = self.xg[lead + _window(offset, stride, self.sizes)]
            weight = self.wg[lead + offset]
            out += self._apply_weight(patch, weight)
        return out.reshape((batch, c_out) + self.sizes)

    def _apply_weight(self, patch: np.ndarray, weight: np.ndarray) -> np.ndarray:
        # patch [B, G, Cg_in, *O], weight [G, Cg_out, Cg_in] -> [B, G, Cg_out, *O]
        if self.groups == 1:
            mixed = np.tensordot(weight[0], patch[:, 0], axes=([1], [1]))
            return np.moveaxis(mixed, 0, 1)[:, None]
        return np.einsum("bgc...,goc->bgo...", patch, weight)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x, w = self.inputs
        batch = grad.shape[0]
        groups = self.groups
        gg = grad.reshape((batch, groups, w.shape[0] // groups) + self.sizes)
        grad_xg = np.zeros_like(self.xg)
        grad_wg = np.zeros_like(self.wg)
        lead = (slice(None),) * 3
        spatial_axes = tuple(range(3, 3 + self.dims))
        for offset in np.ndindex(*w.shape[2:]):
            window = lead + _window(offset, self.stride, self.sizes)
            patch = self.xg[window]
            weight = self.wg[lead + offset]
            if groups == 1:
                grad_wg[lead + offset] = np.tensordot(
                    gg[:, 0], patch[:, 0], axes=([0] + [a - 1 for a in spatial_axes], [0] + [a - 1 for a in spatial_axes])
                )[None]
                back = np.tensordot(weight[0], gg[:, 0], axes=([0], [1]))
                grad_xg[window] += np.moveaxis(back, 0, 1)[:, None]
            else:
                grad_wg[lead + offset] = np.einsum("bgo...,bgc...->goc", gg, patch)
                grad_xg[window] += np.einsum("bgo...,goc->bgc...", gg, weight)
        grad_xp = grad_xg.reshape((batch, x.shape[1]) + grad_xg.shape[3:])
        crop = (slice(None), slice(None)) + tuple(
            slice(p, p + n) for p, n in zip(self.padding, x.shape[2:])
        )
        return grad_xp[crop], grad_wg.reshape(w.shape)


def conv(
    x: ArrayLike,
    kernel: ArrayLike,
    stride: IntOrTuple = 1,
    padding: IntOrTuple = 0,
    dims: int = 1,
    groups: int = 1,
) -> Tensor:
    """Convolution over `dims` spatial axes.

    Output extent per axis is floor((in + 2*pad - k) / stride) + 1; groups equal
    to the channel count gives the depthwise case.
    """
    if dims not in (1, 2, 3):
        raise ConfigurationError(f"conv supports 1, 2 or 3 spatial dims, got {dims}")
    kernel_t = kernel if isinstance(kernel, Tensor) else Tensor(kernel)
    x_t = x if isinstance(x, Tensor) else Tensor(x)
    if kernel_t.ndim != dims + 2 or x_t.ndim != dims + 2:
        raise ShapeError(f"conv{dims}d needs rank-{dims + 2} input and kernel", x_t.shape, kernel_t.shape)
    return Conv.apply(
        x_t,
        kernel_t,
        stride=_expand(stride, dims, "stride"),
        padding=_expand(padding, dims, "padding"),
        groups=groups,
    )


class MaxPool(Function):
    """Max pooling over the trailing spatial axes of `[N, C, *S]`."""

    def forward(
        self, x: np.ndarray, kernel: tuple[int, ...], stride: tuple[int, ...], padding: tuple[int, ...]
    ) -> np.ndarray:
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.sizes = _output_sizes(x.shape[2:], kernel, stride, padding, "max_pool")
        self.xp_shape = x.shape[:2] + tuple(n + 2 * p for n, p in zip(x.shape[2:], padding))
        xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding], constant_values=-np.inf)
        lead = (slice(None),) * 2
        best = np.full(x.shape[:2] + self.sizes, -np.inf, dtype=x.dtype)
        self.argbest = np.zeros(best.shape, dtype=np.int64)
        for k, offset in enumerate(np.ndindex(*kernel)):
            patch = xp[lead + _window(offset, stride, self.sizes)]
            better = patch > best
            best = np.where(better, patch, best)
            self.argbest[better] = k
        return best

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self.inputs[0]
        grad_xp = np.zeros(self.xp_shape, dtype=grad.dtype)
        lead = (slice(None),) * 2
        for k, offset in enumerate(np.ndindex(*self.kernel)):
            grad_xp[lead + _window(offset, self.stride, self.sizes)] += grad * (self.argbest == k)
        crop = lead + tuple(slice(p, p + n) for p, n in zip(self.padding, x.shape[2:]))
        return grad_xp[crop]


class AvgPool(Function):
    """Average pooling (zero padding counted) over the trailing spatial axes."""

    def forward(
        self, x: np.ndarray, kernel: tuple[int, ...], stride: tuple[int, ...], padding: tuple[int, ...]
    ) -> np.ndarray:
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.sizes = _output_sizes(x.shape[2:], kernel, stride, padding, "avg_pool")
        xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding])
        self.xp_shape = xp.shape
        self.scale = 1.0 / float(np.prod(kernel))
        lead = (slice(None),) * 2
        total = np.zeros(x.shape[:2] + self.sizes, dtype=x.dtype)
        for offset in np.ndindex(*kernel):
            total += xp[lead + _window(offset, stride, self.sizes)]
        return total * self.scale

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self.inputs[0]
        grad_xp = np.zeros(self.xp_shape, dtype=grad.dtype)
        lead = (slice(None),) * 2
        for offset in np.ndindex(*self.kernel):
            grad_xp[lead + _window(offset, self.stride, self.sizes)] += grad * self.scale
        crop = lead + tuple(slice(p, p + n) for p, n in zip(self.padding, x.shape[2:]))
        return grad_xp[crop]


def max_pool(x: ArrayLike, kernel: IntOrTuple, stride: IntOrTuple, padding: IntOrTuple = 0, dims: int = 2) -> Tensor:
    return MaxPool.apply(
        x,
        kernel=_expand(kernel, dims, "kernel"),
        stride=_expand(stride, dims, "stride"),
        padding=_expand(padding, dims, "padding"),
    )


def avg_pool(x: ArrayLike, kernel: IntOrTuple, stride: IntOrTuple, padding: IntOrTuple = 0, dims: int = 1) -> Tensor:
    return AvgPool.apply(
        x,
        kernel=_expand(kernel, dims, "kernel"),
        stride=_expand(stride, dims, "stride"),
        padding=_expand(padding, dims, "padding"),
    )
