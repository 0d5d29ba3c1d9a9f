"""AdamW with decoupled weight decay, warmup/linear-decay schedule, and
parameter freezing for the two-phase regime."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError, ValidationError
from ..model.params import ModelParams


def lr_schedule(step: int, warmup: int, total: int, peak: float) -> float:
    """Linear ramp to ``peak`` over ``warmup`` steps, then linear decay to 0 at ``total``."""
    if total <= warmup:
        raise ConfigError([f"total steps ({total}) must exceed warmup ({warmup})"])
    if not 0 <= step <= total:
        raise ValidationError(f"step {step} outside [0, {total}]")
    if warmup > 0 and step <= warmup:
        return peak * step / warmup
    return peak * (total - step) / (total - warmup)


class AdamW:
    """Decoupled weight decay; biases/gains and frozen parameters are exempt.

    Frozen parameters are untouched entirely: their gradients are discarded
    and their moment estimates do not advance.
    """

    def __init__(
        self,
        params: ModelParams,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-6,
        weight_decay: float = 0.01,
    ):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.frozen: set[str] = set()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}
        for name, tensor in params.tensors.items():
            self.m[name] = np.zeros_like(tensor.data)
            self.v[name] = np.zeros_like(tensor.data)
            self.steps[name] = 0

    def register_new_params(self) -> None:
        """Pick up parameters added after construction (heads, extra queries)."""
        for name, tensor in self.params.tensors.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(tensor.data)
                self.v[name] = np.zeros_like(tensor.data)
                self.steps[name] = 0

    def set_frozen(self, names: set[str]) -> None:
        unknown = names - set(self.params.tensors)
        if unknown:
            raise ValidationError(f"cannot freeze unknown parameters: {sorted(unknown)}")
        self.frozen = set(names)

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, grad in grads.items():
            if name in self.frozen:
                continue
            tensor = self.params[name]
            if grad.shape != tensor.shape:
                raise ShapeError(
                    f"gradient shape {grad.shape} does not match parameter "
                    f"{name!r} shape {tensor.shape}"
                )
            self.steps[name] += 1
            t = self.steps[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            if self.weight_decay and self.params.decayable(name):
                tensor.data *= 1.0 - lr * self.weight_decay
            tensor.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in sorted(self.m):
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def state_meta(self) -> dict:
        return {"steps": dict(sorted(self.steps.items()))}

    def load_state(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        for name in self.m:
            self.m[name] = arrays[f"opt.m.{name}"].copy()
            self.v[name] = arrays[f"opt.v.{name}"].copy()
        self.steps = {k: int(v) for k, v in meta["steps"].items()}
