"""AdamW with decoupled weight decay and a single-step learning-rate decay."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter
from .config import OptimConfig, ScheduleConfig


class AdamW:
    def __init__(self, params: list[tuple[str, Parameter]], cfg: OptimConfig):
        self.params = list(params)
        self.lr = cfg.lr
        self.betas = (cfg.beta1, cfg.beta2)
        self.eps = cfg.eps
        self.weight_decay = cfg.weight_decay
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def step(self, grads: dict, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.step_count += 1
        bc1 = 1 - b1 ** self.step_count
        bc2 = 1 - b2 ** self.step_count
        for name, p in self.params:
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.data)
            g = g.astype(p.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.weight_decay:
                p.data *= p.dtype.type(1 - lr * self.weight_decay)
            denom = np.sqrt(v / bc2) + p.dtype.type(self.eps)
            p.data -= p.dtype.type(lr / bc1) * m / denom

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.m:
            self.m[name] = np.array(tensors[f"optim.m.{name}"], dtype=self.m[name].dtype)
            self.v[name] = np.array(tensors[f"optim.v.{name}"], dtype=self.v[name].dtype)
        self.step_count = int(step_count)


def lr_at(epoch: int, base_lr: float, sched: ScheduleConfig) -> float:
    """Learning rate for 0-based ``epoch``: decayed once ``decay_epoch``
    epochs have completed."""
    return base_lr * (sched.decay_factor if epoch >= sched.decay_epoch else 1.0)
