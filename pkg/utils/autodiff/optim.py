"""Adam with the inverse-square-root warmup (Noam) learning-rate schedule."""

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from utils.errors import ConfigurationError, ContractError, NumericError
from .tensor import Tensor


@dataclass(frozen=True)
class NoamSchedule:
    """lr(step) = peak * min(step / warmup, sqrt(warmup / step)).

    The rate rises linearly to `peak_lr` at `warmup_steps` and then decays
    with the inverse square root of the step.
    """

    peak_lr: float = 4e-4
    warmup_steps: int = 25_000

    def __post_init__(self) -> None:
        if self.peak_lr <= 0:
            raise ConfigurationError(f"peak_lr must be positive, got {self.peak_lr}")
        if self.warmup_steps < 1:
            raise ConfigurationError(f"warmup_steps must be >= 1, got {self.warmup_steps}")

    def lr(self, step: int) -> float:
        if step < 1:
            raise ContractError(f"Optimizer steps are 1-based, got {step}")
        return self.peak_lr * min(step / self.warmup_steps, (self.warmup_steps / step) ** 0.5)


@dataclass
class AdamState:
    """First and second moment estimates keyed by parameter name."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def global_grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    step: int,
    schedule: NoamSchedule,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
    clip_norm: float = 0.0,
) -> float:
    """Apply one bias-corrected Adam update in place.

    Parameters with no entry in `grads` are left untouched (their moments do
    not advance). Every gradient is checked before any parameter changes, so
    a non-finite gradient aborts the step with the parameters intact.

    Returns
    -------
    float
        The learning rate used for this step.
    """
    lr = schedule.lr(step)
    for name in sorted(grads):
        grad = grads[name]
        if not np.all(np.isfinite(grad)):
            raise NumericError(
                "Non-finite gradient",
                {"step": step, "parameter": name, "nan": int(np.isnan(grad).sum()), "inf": int(np.isinf(grad).sum())},
            )
        if name not in params:
            raise ContractError(f"Gradient for unknown parameter `{name}`")
        if grad.shape != params[name].shape:
            raise ContractError(f"Gradient shape {grad.shape} does not match parameter `{name}` {params[name].shape}")

    scale = 1.0
    if clip_norm > 0:
        norm = global_grad_norm(grads)
        if norm > clip_norm:
            scale = clip_norm / norm

    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step
    for name in sorted(grads):
        grad = grads[name] * scale
        param = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        param.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return lr


class Adam:
    """Stateful wrapper around `adam_step` owning its step counter.

    Parameters
    ----------
    params: Mapping[str, Tensor]
        Named trainable parameters; gradients are read from `.grad`.
    schedule: NoamSchedule
        Learning-rate schedule evaluated at each 1-based step.
    """

    def __init__(
        self,
        params: Mapping[str, Tensor],
        schedule: Optional[NoamSchedule] = None,
        beta1: float = 0.9,
        beta2: float = 0.98,
        eps: float = 1e-9,
        clip_norm: float = 0.0,
    ) -> None:
        self.params = dict(params)
        self.schedule = schedule if schedule is not None else NoamSchedule()
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.state = AdamState()
        self.step_count = 0
        self.last_lr = 0.0

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def step(self) -> float:
        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
        self.step_count += 1
        try:
            self.last_lr = adam_step(
                self.params,
                grads,
                self.state,
                self.step_count,
                self.schedule,
                self.beta1,
                self.beta2,
                self.eps,
                self.clip_norm,
            )
        except NumericError:
            self.step_count -= 1
            raise
        return self.last_lr
