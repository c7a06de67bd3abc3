"""Parameter containers and the layers shared by every model component."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .rng import Stream


class Module:
    """Holds :class:`Parameter` attributes and child modules.

    Parameter names follow attribute order, dotted by nesting, with list
    children indexed (``enc.0.attn.wq.weight``).
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable(self) -> list[tuple[str, Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        for name, p in own.items():
            if name not in state:
                raise KeyError(f"missing tensor {name!r} in state")
            if tuple(state[name].shape) != p.shape:
                raise ValueError(f"tensor {name!r}: expected shape {p.shape}, got {tuple(state[name].shape)}")
        extra = sorted(set(state) - set(own))
        if extra:
            raise KeyError(f"unexpected tensor {extra[0]!r} in state")
        for name, p in own.items():
            p.data = np.array(state[name], dtype=p.dtype)


def uniform_init(rng: Stream, shape, bound: float, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, shape, dtype=dtype)


class Linear(Module):
    """``y = x @ weight + bias`` with weight stored as (in, out).

    Default init mirrors the usual fan-in uniform bound 1/sqrt(in).
    """

    def __init__(self, n_in: int, n_out: int, rng: Stream, dtype=np.float64,
                 weight_bound: float | None = None, bias_bound: float | None = None):
        bound = 1.0 / math.sqrt(n_in)
        wb = bound if weight_bound is None else weight_bound
        bb = bound if bias_bound is None else bias_bound
        self.n_in, self.n_out = n_in, n_out
        self.weight = Parameter(uniform_init(rng.split("w"), (n_in, n_out), wb, dtype))
        self.bias = Parameter(uniform_init(rng.split("b"), (n_out,), bb, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ad.ShapeError(f"Linear: expected last extent {self.n_in}, got input {x.shape}")
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-8):
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=dtype))
        self.beta = Parameter(np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.eps) * self.gamma + self.beta


def sine_position_embedding(h: int, w: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Fixed 2-D sinusoidal table of shape (h*w, dim), rows row-major.

    Half the channels encode the row index, half the column index.
    """
    if dim % 4:
        raise ValueError(f"position embedding width must be divisible by 4, got {dim}")
    quarter = dim // 4
    freq = 1.0 / (10000 ** (np.arange(quarter) / quarter))
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    ys = ys.reshape(-1, 1) * freq
    xs = xs.reshape(-1, 1) * freq
    table = np.concatenate([np.sin(ys), np.cos(ys), np.sin(xs), np.cos(xs)], axis=1)
    return table.astype(dtype)
