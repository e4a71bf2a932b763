"""Parameter containers and the basic layers the models are assembled from."""

from typing import Any, Iterator, Mapping, Optional, Sequence, Union
import zlib

import numpy as np

from utils.autodiff import (
    Tensor,
    batch_norm,
    conv,
    dropout,
    layer_norm,
    take,
)
from utils.errors import ConfigurationError, DataError, ShapeError


class Module:
    """Tree of named parameters, buffers and sub-modules.

    Assigning a `Tensor` that requires grad registers a parameter, assigning a
    `Module` registers a child. Non-trainable state (batch-norm statistics)
    is registered explicitly with `register_buffer`. Names are dotted paths in
    registration order, which is also the order `state_dict` uses.
    """

    def __init__(self) -> None:
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value: Any) -> None:
        if isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            value.name = value.name or name
            self._parameters[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError(f"{type(self).__name__} has no forward")

    # -- traversal ------------------------------------------------------
    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for path, module in self.named_modules():
            for name, param in module._parameters.items():
                out[f"{path}.{name}" if path else name] = param
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for path, module in self.named_modules():
            for name, buf in module._buffers.items():
                out[f"{path}.{name}" if path else name] = buf
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- modes ----------------------------------------------------------
    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> "Module":
        """Stop every parameter from receiving gradients."""
        for param in self.parameters():
            param.requires_grad = False
            param.zero_grad()
        return self

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def seed_dropout(self, seed: int) -> None:
        """Give every dropout layer its own stream derived from (seed, path)."""
        for path, module in self.named_modules():
            if isinstance(module, Dropout):
                module.reseed(seed, path)

    # -- state ----------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters().items()}
        state.update({name: b.copy() for name, b in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Copy arrays into the existing parameters and buffers in place."""
        targets: dict[str, np.ndarray] = {n: p.data for n, p in self.named_parameters().items()}
        targets.update(self.named_buffers())
        if strict:
            missing = sorted(set(targets) - set(state))
            unexpected = sorted(set(state) - set(targets))
            if missing or unexpected:
                raise DataError(f"State mismatch: missing={missing} unexpected={unexpected}")
        for name, target in targets.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != target.shape:
                raise DataError(f"Parameter `{name}` has shape {value.shape}, expected {target.shape}")
            target[...] = value


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Linear(Module):
    """y = x W + b over the last axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True) -> None:
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = Tensor(_uniform(rng, (in_dim, out_dim), in_dim, out_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"Linear expects last extent {self.in_dim}", x.shape)
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class BatchNorm(Module):
    """Batch normalization over channel axis 1 with an optional validity mask."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> None:
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gain = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        return batch_norm(
            x,
            self.gain,
            self.bias,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
            mask=mask,
        )


class Dropout(Module):
    """Inverted dropout drawing from a private, reproducible stream."""

    def __init__(self, p: float) -> None:
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigurationError(f"Dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.rng = np.random.default_rng(0)

    def reseed(self, seed: int, path: str) -> None:
        self.rng = np.random.default_rng([seed, zlib.crc32(path.encode("utf-8"))])

    def forward(self, x: Tensor) -> Tensor:
        return dropout(x, self.p, self.rng, self.training)


class Conv(Module):
    """Convolution layer over 1, 2 or 3 spatial axes, `[B, C, *S]` layout."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: Union[int, Sequence[int]],
        rng: np.random.Generator,
        stride: Union[int, Sequence[int]] = 1,
        padding: Union[int, Sequence[int]] = 0,
        dims: int = 1,
        groups: int = 1,
        bias: bool = True,
    ) -> None:
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ConfigurationError(
                f"Channels {in_channels}->{out_channels} are not divisible by groups={groups}"
            )
        kernel = (kernel,) * dims if isinstance(kernel, int) else tuple(kernel)
        self.dims, self.stride, self.padding, self.groups = dims, stride, padding, groups
        fan_in = (in_channels // groups) * int(np.prod(kernel))
        shape = (out_channels, in_channels // groups) + kernel
        self.weight = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = conv(x, self.weight, self.stride, self.padding, dims=self.dims, groups=self.groups)
        if self.bias is None:
            return out
        return out + self.bias.reshape((1, -1) + (1,) * self.dims)


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.num, self.dim = num, dim
        self.table = Tensor(rng.normal(0.0, dim**-0.5, size=(num, dim)), requires_grad=True)

    def forward(self, indices: np.ndarray) -> Tensor:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.num):
            raise DataError(f"Embedding index out of range [0, {self.num})")
        return take(self.table, indices)
