"""Feature adapter and the two-stage classifier that yields the class token.

All feature tensors here are in token layout ``(B, P, C)`` with ``P = H*W``
positions in row-major order. Use :func:`to_tokens` / :func:`to_map` to
convert from and to ``(B, C, H, W)``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .nn import Linear, Module
from .rng import Stream


def to_tokens(fmap) -> np.ndarray:
    """(B, C, H, W) array -> (B, H*W, C) array."""
    fmap = np.asarray(fmap)
    B, C, H, W = fmap.shape
    return np.ascontiguousarray(fmap.reshape(B, C, H * W).transpose(0, 2, 1))


def to_map(tokens, H: int, W: int) -> np.ndarray:
    """(B, H*W, C) array -> (B, C, H, W) array."""
    tokens = np.asarray(tokens)
    B, P, C = tokens.shape
    if P != H * W:
        raise ValueError(f"{P} tokens cannot form a {H}x{W} map")
    return np.ascontiguousarray(tokens.transpose(0, 2, 1).reshape(B, C, H, W))


class Adapter(Module):
    """Single fully connected layer applied at every position (C_in -> D)."""

    def __init__(self, c_in: int, d: int, rng: Stream, dtype=np.float64):
        self.fc = Linear(c_in, d, rng.split("fc"), dtype)

    @property
    def c_in(self) -> int:
        return self.fc.n_in

    def __call__(self, f: Tensor) -> Tensor:
        if f.shape[-1] != self.c_in:
            raise ad.ShapeError(f"adapt: expected {self.c_in} channels, got feature shape {f.shape}")
        return self.fc(f)

    @classmethod
    def identity(cls, d: int, dtype=np.float64) -> "Adapter":
        a = cls(d, d, Stream(0), dtype)
        a.fc.weight = Parameter(np.eye(d, dtype=dtype))
        a.fc.bias = Parameter(np.zeros(d, dtype=dtype))
        return a


class PromptMapper(Module):
    """Class encoder -> flatten -> channel encoder -> class token -> head.

    The class encoder is a per-position perceptron D -> hidden -> hidden ->
    token_dim (ReLU, ReLU, softmax). Its (B, P, token_dim) output is
    flattened position-major (each position's vector contiguous) and fed to
    the channel encoder P*token_dim -> hidden -> hidden -> token_dim
    (LeakyReLU, LeakyReLU, softmax). The head maps the token to logits.
    """

    def __init__(self, d: int, positions: int, n_classes: int, rng: Stream, *,
                 hidden: int = 256, token_dim: int = 32, dtype=np.float64):
        self.d, self.positions, self.token_dim = d, positions, token_dim
        self.class_enc = [
            Linear(d, hidden, rng.split("ce", 0), dtype),
            Linear(hidden, hidden, rng.split("ce", 1), dtype),
            Linear(hidden, token_dim, rng.split("ce", 2), dtype),
        ]
        self.chan_enc = [
            Linear(positions * token_dim, hidden, rng.split("ch", 0), dtype),
            Linear(hidden, hidden, rng.split("ch", 1), dtype),
            Linear(hidden, token_dim, rng.split("ch", 2), dtype),
        ]
        self.head = Linear(token_dim, n_classes, rng.split("head"), dtype)

    def encode_class(self, f: Tensor) -> Tensor:
        if f.ndim != 3 or f.shape[1:] != (self.positions, self.d):
            raise ad.ShapeError(
                f"encode_class: expected (B, {self.positions}, {self.d}), got {f.shape}")
        c1, c2, c3 = self.class_enc
        x = ad.relu(c1(f))
        x = ad.relu(c2(x))
        x = ad.softmax(c3(x))
        x = ad.reshape(x, (f.shape[0], self.positions * self.token_dim))
        h1, h2, h3 = self.chan_enc
        x = ad.leaky_relu(h1(x))
        x = ad.leaky_relu(h2(x))
        return ad.softmax(h3(x))

    def classify(self, token: Tensor) -> Tensor:
        if token.shape[-1] != self.token_dim:
            raise ad.ShapeError(f"classify: token width {token.shape[-1]} != {self.token_dim}")
        return self.head(token)
