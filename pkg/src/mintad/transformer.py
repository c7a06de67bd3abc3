"""Denoising reconstruction transformer.

Post-norm encoder/decoder layers in the usual order::

    encoder: x = LN1(x + drop(SA(x)));  x = LN2(x + drop(W2 drop(relu(W1 x))))
    decoder: t = LN1(t + drop(SA(t)));  t = LN2(t + drop(CA(t, mem)));
             t = LN3(t + drop(W2 drop(relu(W1 t))))

A fixed 2-D sine position table is added to encoder queries/keys and to the
cross-attention keys. The decoder's input sequence is the query map. No
neighbour masking; a linear output projection maps width K back to the
original channel count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import LayerNorm, Linear, Module, sine_position_embedding
from .rng import Stream


@dataclass(frozen=True)
class JitterConfig:
    scale: float = 0.2

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError(f"jitter scale must be >= 0, got {self.scale}")


def jitter(f: Tensor, cfg: JitterConfig, train: bool, rng: Stream | None) -> Tensor:
    """Add N(0, (scale * rms)^2) noise per element, rms taken per sample."""
    if not train or cfg.scale == 0:
        return f
    axes = tuple(range(1, f.ndim)) if f.ndim > 1 else None
    rms = np.sqrt(np.mean(np.square(f.data), axis=axes, keepdims=True))
    return ad.gaussian_noise(f, cfg.scale * rms, train, rng)


class MultiheadAttention(Module):
    def __init__(self, width: int, heads: int, rng: Stream, dtype=np.float64):
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        self.width, self.heads = width, heads
        self.wq = Linear(width, width, rng.split("q"), dtype)
        self.wk = Linear(width, width, rng.split("k"), dtype)
        self.wv = Linear(width, width, rng.split("v"), dtype)
        self.wo = Linear(width, width, rng.split("o"), dtype)
        self.last_attention: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        x = ad.reshape(x, (B, L, self.heads, self.width // self.heads))
        return ad.transpose(x, (0, 2, 1, 3))

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        B, L, _ = q.shape
        dk = self.width // self.heads
        Q = self._split(self.wq(q) * (1.0 / math.sqrt(dk)))
        K = self._split(self.wk(k))
        V = self._split(self.wv(v))
        attn = ad.softmax(Q @ ad.transpose(K))
        self.last_attention = attn.data
        out = ad.transpose(attn @ V, (0, 2, 1, 3))
        return self.wo(ad.reshape(out, (B, L, self.width)))


class EncoderLayer(Module):
    def __init__(self, width: int, heads: int, ff: int, dropout: float, rng: Stream, dtype=np.float64):
        self.p = dropout
        self.attn = MultiheadAttention(width, heads, rng.split("attn"), dtype)
        self.lin1 = Linear(width, ff, rng.split("lin1"), dtype)
        self.lin2 = Linear(ff, width, rng.split("lin2"), dtype)
        self.ln1 = LayerNorm(width, dtype)
        self.ln2 = LayerNorm(width, dtype)

    def __call__(self, x: Tensor, pos: Tensor, train: bool, rng: Stream | None) -> Tensor:
        r = rng.split if rng is not None else (lambda *_: None)
        qk = x + pos
        x = self.ln1(x + ad.dropout(self.attn(qk, qk, x), self.p, train, r("d1")))
        h = ad.dropout(ad.relu(self.lin1(x)), self.p, train, r("dff"))
        return self.ln2(x + ad.dropout(self.lin2(h), self.p, train, r("d2")))


class DecoderLayer(Module):
    def __init__(self, width: int, heads: int, ff: int, dropout: float, rng: Stream, dtype=np.float64):
        self.p = dropout
        self.self_attn = MultiheadAttention(width, heads, rng.split("sa"), dtype)
        self.cross_attn = MultiheadAttention(width, heads, rng.split("ca"), dtype)
        self.lin1 = Linear(width, ff, rng.split("lin1"), dtype)
        self.lin2 = Linear(ff, width, rng.split("lin2"), dtype)
        self.ln1 = LayerNorm(width, dtype)
        self.ln2 = LayerNorm(width, dtype)
        self.ln3 = LayerNorm(width, dtype)

    def __call__(self, t: Tensor, memory: Tensor, pos: Tensor, train: bool, rng: Stream | None) -> Tensor:
        r = rng.split if rng is not None else (lambda *_: None)
        t = self.ln1(t + ad.dropout(self.self_attn(t, t, t), self.p, train, r("d1")))
        t = self.ln2(t + ad.dropout(self.cross_attn(t, memory + pos, memory), self.p, train, r("d2")))
        h = ad.dropout(ad.relu(self.lin1(t)), self.p, train, r("dff"))
        return self.ln3(t + ad.dropout(self.lin2(h), self.p, train, r("d3")))


class ReconstructionTransformer(Module):
    def __init__(self, width: int, height: int, grid_width: int, out_channels: int, rng: Stream, *,
                 heads: int = 8, enc_depth: int = 4, dec_depth: int = 4, ff_mult: int = 4,
                 dropout: float = 0.1, jitter_scale: float = 0.2, dtype=np.float64):
        self.width = width
        self.seq_len = height * grid_width
        self.jitter_cfg = JitterConfig(jitter_scale)
        self.pos = Tensor(sine_position_embedding(height, grid_width, width, dtype))
        self.enc = [EncoderLayer(width, heads, ff_mult * width, dropout, rng.split("enc", i), dtype)
                    for i in range(enc_depth)]
        self.dec = [DecoderLayer(width, heads, ff_mult * width, dropout, rng.split("dec", i), dtype)
                    for i in range(dec_depth)]
        self.out_proj = Linear(width, out_channels, rng.split("out"), dtype)

    def _check_seq(self, x: Tensor, what: str) -> None:
        if x.ndim != 3 or x.shape[1] != self.seq_len or x.shape[2] != self.width:
            raise ad.ShapeError(
                f"{what}: model expects (B, {self.seq_len}, {self.width}) sequences, got {x.shape}")

    def encode(self, f_seq: Tensor, train: bool = False, rng: Stream | None = None) -> Tensor:
        self._check_seq(f_seq, "encode")
        x = f_seq
        for i, layer in enumerate(self.enc):
            x = layer(x, self.pos, train, rng.split("enc", i) if rng is not None else None)
        return x

    def decode(self, memory: Tensor, q: Tensor, train: bool = False, rng: Stream | None = None) -> Tensor:
        """Decoder stack over the query sequence; returns width-K tokens."""
        self._check_seq(memory, "decode memory")
        self._check_seq(q, "decode query")
        if memory.shape[0] != q.shape[0]:
            raise ad.ShapeError(f"decode: batch of memory {memory.shape} and query {q.shape} differ")
        t = q
        for i, layer in enumerate(self.dec):
            t = layer(t, memory, self.pos, train, rng.split("dec", i) if rng is not None else None)
        return t

    def reconstruct(self, f: Tensor, q: Tensor, train: bool = False, rng: Stream | None = None) -> Tensor:
        """Jitter (train only), encode, decode against ``q``, project to C_out."""
        r = rng.split if rng is not None else (lambda *_: None)
        x = jitter(f, self.jitter_cfg, train, r("jitter"))
        memory = self.encode(x, train, r("drop"))
        return self.out_proj(self.decode(memory, q, train, r("drop")))

    def attention_maps(self) -> list[np.ndarray]:
        maps = []
        for layer in self.enc:
            maps.append(layer.attn.last_attention)
        for layer in self.dec:
            maps.append(layer.self_attn.last_attention)
            maps.append(layer.cross_attn.last_attention)
        return [m for m in maps if m is not None]
