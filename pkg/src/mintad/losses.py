"""Training objective and anomaly scoring.

Batch reduction is the mean over samples for every loss. Per sample:

* cross-entropy keeps the ``1/N`` factor: ``-(1/N) * log softmax(logits)[y]``
* prior loss sums the Gaussian NLL over positions and channels, with
  ``sigma`` a standard deviation
* MSE sums squared error over all elements and divides by ``H*W`` only
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class LossWeights:
    ce: float = 1.0
    prior: float = 0.1

    def __post_init__(self):
        if self.ce < 0 or self.prior < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self}")


def ce_loss(logits: Tensor, labels, n_classes: int | None = None) -> Tensor:
    """Accepts (N,) logits with an int label or (B, N) logits with B labels."""
    n = logits.shape[-1] if n_classes is None else n_classes
    if logits.shape[-1] != n:
        raise ValueError(f"ce_loss: logits width {logits.shape[-1]} != N={n}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if np.any(labels < 0) or np.any(labels >= n):
        raise ValueError(f"ce_loss: label out of range for N={n}: {labels}")
    onehot = np.zeros(labels.shape + (n,), dtype=logits.dtype)
    onehot[np.arange(labels.size), labels] = 1
    if logits.ndim == 1:
        onehot = onehot[0]
    picked = ad.sum_(ad.log_softmax(logits) * onehot, axis=-1)
    return ad.mean(picked) * (-1.0 / n)


PRIOR_REDUCTIONS = ("sum", "mean")


def prior_loss(f: Tensor, mu: Tensor, sigma: Tensor, reduction: str = "sum") -> Tensor:
    """Gaussian NLL of ``f`` under per-element N(mu, sigma^2).

    ``f``, ``mu`` and ``sigma`` are (B, P, D), or unbatched (P, D). With
    ``reduction="sum"`` the per-element terms are summed over positions and
    channels; ``"mean"`` averages them instead (the sum divided by P*D).
    Either way the result is averaged over the batch.
    """
    if reduction not in PRIOR_REDUCTIONS:
        raise ValueError(f"prior_loss: reduction must be one of {PRIOR_REDUCTIONS}, got {reduction!r}")
    if not (f.shape == mu.shape == sigma.shape):
        raise ValueError(f"prior_loss: shapes differ f={f.shape} mu={mu.shape} sigma={sigma.shape}")
    if np.any(sigma.data <= 0):
        raise ValueError("prior_loss: sigma must be strictly positive")
    z = (f - mu) / sigma
    nll = ad.log(sigma) + 0.5 * ad.square(z) + HALF_LOG_2PI
    reduce = ad.sum_ if reduction == "sum" else ad.mean
    if f.ndim == 2:
        return reduce(nll)
    return ad.mean(reduce(nll, axis=tuple(range(1, f.ndim))))


def mse_loss(target, recon: Tensor, positions: int | None = None) -> Tensor:
    """``|target - recon|^2 / (H*W)`` per sample, batch-averaged.

    Inputs are token sequences (B, P, C) or unbatched (P, C); ``positions``
    defaults to P.
    """
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=recon.dtype))
    if target.shape != recon.shape:
        raise ValueError(f"mse_loss: shape mismatch {target.shape} vs {recon.shape}")
    P = positions if positions is not None else recon.shape[-2]
    sq = ad.square(target - recon)
    if recon.ndim == 2:
        return ad.sum_(sq) * (1.0 / P)
    per_sample = ad.sum_(sq, axis=tuple(range(1, recon.ndim)))
    return ad.mean(per_sample) * (1.0 / P)


def total_loss(mse: Tensor, ce: Tensor | None, prior: Tensor | None, w: LossWeights = LossWeights()) -> Tensor:
    out = mse
    if ce is not None and w.ce:
        out = out + ce * w.ce
    if prior is not None and w.prior:
        out = out + prior * w.prior
    return out


# ---------------------------------------------------------------------------
# scoring

@dataclass
class AnomalyMap:
    scores: np.ndarray
    source_shape: tuple[int, int]
    mode: str = "bilinear"


def patch_scores(original: np.ndarray, recon: np.ndarray) -> np.ndarray:
    """Squared L2 over channels; inputs (..., C, H, W) -> (..., H, W)."""
    original = np.asarray(original, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if original.shape != recon.shape:
        raise ValueError(f"shape mismatch {original.shape} vs {recon.shape}")
    return np.square(original - recon).sum(axis=-3)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights with half-pixel centres, edges clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def bilinear_resize(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize of the last two axes."""
    grid = np.asarray(grid, dtype=np.float64)
    h, w = grid.shape[-2:]
    rows = _interp_matrix(h, out_h)
    cols = _interp_matrix(w, out_w)
    return rows @ grid @ cols.T


def anomaly_map(original: np.ndarray, recon: np.ndarray, out_h: int, out_w: int) -> AnomalyMap:
    """Per-position squared error between ``original`` (C, H, W) and its
    reconstruction, bilinearly resized to ``(out_h, out_w)``.

    Batched (B, C, H, W) inputs give a (B, out_h, out_w) score array.
    """
    s = patch_scores(original, recon)
    h, w = s.shape[-2:]
    if out_h < h or out_w < w:
        raise ValueError(f"output size {(out_h, out_w)} smaller than source {(h, w)}")
    out = bilinear_resize(s, out_h, out_w)
    return AnomalyMap(np.maximum(out, 0.0), (h, w))


def image_score(m: AnomalyMap | np.ndarray) -> float:
    scores = m.scores if isinstance(m, AnomalyMap) else np.asarray(m)
    if scores.size == 0:
        raise ValueError("image_score of an empty map")
    return float(scores.max())
