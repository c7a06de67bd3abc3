"""Full MINT-AD model: adapter, prompt mapper, INR query, distribution
decoder and reconstruction transformer, with the ablation switches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .config import DataConfig, LossConfig, ModelConfig
from .inr import INR, DistributionDecoder, GaussianParams, PositionTable
from .losses import LossWeights, ce_loss, mse_loss, prior_loss, total_loss
from .nn import Module
from .prompt_mapper import Adapter, PromptMapper, to_map, to_tokens
from .rng import Stream
from .transformer import ReconstructionTransformer


@dataclass
class Outputs:
    target: Tensor               # f' as tokens (B, P, C)
    adapted: Tensor              # f (B, P, D)
    recon: Tensor                # f-hat (B, P, C)
    token: Tensor | None = None
    logits: Tensor | None = None
    query: Tensor | None = None
    gauss: GaussianParams | None = None


@dataclass
class LossTerms:
    total: Tensor
    mse: Tensor
    ce: Tensor | None
    prior: Tensor | None

    def values(self) -> dict[str, float]:
        val = lambda t: float(t.data) if t is not None else 0.0  # noqa: E731
        return {"mse": val(self.mse), "ce": val(self.ce), "prior": val(self.prior), "total": val(self.total)}


class MintAD(Module):
    def __init__(self, data: DataConfig, model: ModelConfig, loss: LossConfig, seed: int,
                 dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.H, self.W, self.C = data.height, data.width, data.channels
        self.n_classes = data.num_classes
        self.weights = LossWeights(loss.lambda_ce, loss.lambda_prior)
        self.use_query = model.use_query
        self.prior_reduction = loss.prior_reduction
        P, K = self.H * self.W, model.width
        root = Stream(seed).split("init")

        self.adapter = Adapter(self.C, K, root.split("adapter"), dtype)
        self.prompt = PromptMapper(K, P, self.n_classes, root.split("prompt"),
                                   hidden=model.classifier_hidden, token_dim=model.token_dim, dtype=dtype)
        self.positions = PositionTable(P, root.split("pos"), dtype)
        self.inr = INR(model.token_dim, K, root.split("inr"), depth=model.inr_depth,
                       omega0=model.omega0, dtype=dtype)
        self.dist = DistributionDecoder(K, K, root.split("dist"), dtype=dtype)
        if not model.use_query:
            self.static_query = Parameter(root.split("static_query").normal((P, K), dtype=dtype))
        self.transformer = ReconstructionTransformer(
            K, self.H, self.W, self.C, root.split("transformer"), heads=model.heads,
            enc_depth=model.enc_depth, dec_depth=model.dec_depth, ff_mult=model.ff_mult,
            dropout=model.dropout, jitter_scale=model.jitter_scale, dtype=dtype)

        self.needs_inr = self.use_query or self.weights.prior > 0
        self.needs_token = self.needs_inr or self.weights.ce > 0
        if not model.use_adapter:
            self.adapter.freeze()
        if not self.needs_token:
            self.prompt.freeze()
        if not self.needs_inr:
            self.inr.freeze()
            self.positions.freeze()
        if self.weights.prior == 0:
            self.dist.freeze()

    def forward(self, feats: np.ndarray, train: bool = False, rng: Stream | None = None) -> Outputs:
        """``feats`` is a (B, C, H, W) array of original features."""
        feats = np.asarray(feats)
        if feats.ndim != 4 or feats.shape[1:] != (self.C, self.H, self.W):
            raise ad.ShapeError(f"model expects (B, {self.C}, {self.H}, {self.W}) features, got {feats.shape}")
        x = Tensor(to_tokens(feats).astype(self.dtype, copy=False))
        f = self.adapter(x)
        out = Outputs(target=x, adapted=f, recon=None)
        q_inr = None
        if self.needs_token:
            out.token = self.prompt.encode_class(f)
            out.logits = self.prompt.classify(out.token)
        if self.needs_inr:
            q_inr = self.inr.query_map(self.positions.table, out.token)
        if self.use_query:
            out.query = q_inr
        else:
            out.query = ad.expand(self.static_query, 0, feats.shape[0])
        if self.weights.prior > 0:
            out.gauss = self.dist(q_inr)
        out.recon = self.transformer.reconstruct(f, out.query, train, rng)
        return out

    def losses(self, out: Outputs, labels) -> LossTerms:
        mse = mse_loss(out.target, out.recon)
        ce = ce_loss(out.logits, labels, self.n_classes) if self.weights.ce > 0 else None
        prior = None
        if self.weights.prior > 0:
            prior = prior_loss(out.adapted, out.gauss.mu, out.gauss.sigma, self.prior_reduction)
        return LossTerms(total_loss(mse, ce, prior, self.weights), mse, ce, prior)

    def reconstruct_maps(self, feats: np.ndarray, batch_size: int = 32,
                         rng: Stream | None = None) -> np.ndarray:
        """Eval-mode reconstructions as (N, C, H, W)."""
        outs = []
        for i in range(0, len(feats), batch_size):
            o = self.forward(feats[i:i + batch_size], train=False, rng=rng)
            outs.append(to_map(o.recon.data, self.H, self.W))
        return np.concatenate(outs) if outs else np.zeros((0, self.C, self.H, self.W))
