"""Class-conditioned implicit neural representation and distribution decoder.

The synthesis path is a sine network over a learnable 3-d position code;
the modulation path is a ReLU network over ``[previous modulation, token]``
whose output multiplies each synthesis activation::

    h_0 = z,  h_i = a_i * sin(W_i h_{i-1} + b_i)
    a_0 = z,  a_i = relu(W'_i [a_{i-1}, t] + b'_i)

The token is concatenated at every modulation layer, so modulation widths
are (3 + T) -> K for the first layer and (K + T) -> K afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .nn import Linear, Module
from .rng import Stream

POS_DIM = 3
SIGMA_FLOOR = 1e-4


class PositionTable(Module):
    def __init__(self, positions: int, rng: Stream, dtype=np.float64):
        self.table = Parameter(rng.normal((positions, POS_DIM), dtype=dtype))

    def __call__(self) -> Tensor:
        return self.table


class INR(Module):
    def __init__(self, token_dim: int, width: int, rng: Stream, *, depth: int = 5,
                 omega0: float = 30.0, dtype=np.float64):
        self.token_dim, self.width, self.depth = token_dim, width, depth
        first_w = omega0 / POS_DIM
        first_b = omega0 / math.sqrt(POS_DIM)
        hidden_w = math.sqrt(6.0 / width) / omega0
        self.syn = [Linear(POS_DIM, width, rng.split("syn", 0), dtype,
                           weight_bound=first_w, bias_bound=first_b)]
        self.syn += [Linear(width, width, rng.split("syn", i), dtype, weight_bound=hidden_w)
                     for i in range(1, depth)]
        self.mod = [Linear(POS_DIM + token_dim, width, rng.split("mod", 0), dtype)]
        self.mod += [Linear(width + token_dim, width, rng.split("mod", i), dtype)
                     for i in range(1, depth)]

    def __call__(self, z: Tensor, t: Tensor) -> Tensor:
        """Query vectors for position codes ``z`` (..., 3) and tokens ``t`` (..., T).

        ``z`` may omit leading batch axes present in ``t``; it is shared
        across them.
        """
        if z.shape[-1] != POS_DIM:
            raise ad.ShapeError(f"inr: position code must have {POS_DIM} entries, got {z.shape}")
        if t.shape[-1] != self.token_dim:
            raise ad.ShapeError(f"inr: token must have {self.token_dim} entries, got {t.shape}")
        a = z
        for axis in range(t.ndim - z.ndim):
            a = ad.expand(a, 0, t.shape[t.ndim - z.ndim - 1 - axis])
        if a.shape[:-1] != t.shape[:-1]:
            raise ad.ShapeError(f"inr: position shape {z.shape} incompatible with token shape {t.shape}")
        h = z
        for syn, mod in zip(self.syn, self.mod):
            a = ad.relu(mod(ad.concat([a, t])))
            h = a * ad.sin(syn(h))
        return h

    def query_map(self, pos: Tensor, t: Tensor) -> Tensor:
        """(P, 3) positions and (B, T) tokens -> (B, P, K) query sequence."""
        if t.ndim != 2:
            raise ad.ShapeError(f"query_map: token batch must be (B, T), got {t.shape}")
        tt = ad.expand(t, 1, pos.shape[0])
        return self(pos, tt)


@dataclass
class GaussianParams:
    mu: Tensor
    sigma: Tensor


class DistributionDecoder(Module):
    """K -> hidden -> hidden -> 2D perceptron; the output splits into
    ``mu`` (first D) and a raw scale mapped through softplus with a
    ``SIGMA_FLOOR`` floor. ``sigma`` is a standard deviation."""

    def __init__(self, width: int, d: int, rng: Stream, *, hidden: int | None = None,
                 dtype=np.float64):
        hidden = hidden or width
        self.d = d
        self.l1 = Linear(width, hidden, rng.split("l1"), dtype)
        self.l2 = Linear(hidden, hidden, rng.split("l2"), dtype)
        self.l3 = Linear(hidden, 2 * d, rng.split("l3"), dtype)

    def __call__(self, q: Tensor) -> GaussianParams:
        x = ad.leaky_relu(self.l1(q))
        x = ad.leaky_relu(self.l2(x))
        x = self.l3(x)
        mu = ad.take_last(x, 0, self.d)
        sigma = ad.clamp_min(ad.softplus(ad.take_last(x, self.d, 2 * self.d)), SIGMA_FLOOR)
        return GaussianParams(mu, sigma)


def query_self_attention_map(q) -> np.ndarray:
    """Row-softmax of ``Q Q^T / sqrt(K)`` for a (P, K) query map."""
    q = np.asarray(q.data if isinstance(q, Tensor) else q, dtype=np.float64)
    if q.ndim != 2 or q.shape[0] == 0:
        raise ValueError(f"expected a nonempty (P, K) query map, got shape {q.shape}")
    s = q @ q.T / math.sqrt(q.shape[1])
    s -= s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)
