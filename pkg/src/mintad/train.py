"""Training loop, evaluation and the synthetic benchmark data plumbing."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Graph, NonFiniteError
from .checkpoint import Checkpoint, load_into
from .config import RunConfig, dumps
from .data import FeatureDataset, make_feature_dataset
from .losses import anomaly_map
from .metrics import aupr, auroc, write_metrics_csv
from .model import MintAD
from .optim import AdamW, lr_at
from .rng import Stream

log = logging.getLogger(__name__)

LOSS_LOG_HEADER = ("epoch", "L_MSE", "L_CE", "L_Prior", "L_total", "lr")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: MintAD
    checkpoint: Checkpoint
    log: list[dict] = field(default_factory=list)


def build_model(cfg: RunConfig) -> MintAD:
    return MintAD(cfg.data, cfg.model, cfg.loss, cfg.seed, cfg.dtype)


def train_dataset(cfg: RunConfig) -> FeatureDataset:
    d = cfg.data
    return make_feature_dataset(d.num_classes, d.channels, d.height, d.width, d.n_train, 0, cfg.seed,
                                split="train", noise_std=d.noise_std, shift_factor=d.shift_factor)


def test_dataset(cfg: RunConfig) -> FeatureDataset:
    d = cfg.data
    return make_feature_dataset(d.num_classes, d.channels, d.height, d.width, d.n_test_normal,
                                d.n_test_anomalous, cfg.seed, split="test", noise_std=d.noise_std,
                                shift_factor=d.shift_factor)


def _checkpoint(cfg: RunConfig, model: MintAD, opt: AdamW, epoch: int) -> Checkpoint:
    return Checkpoint(
        config=cfg,
        params=model.state_dict(),
        epoch=epoch,
        rng={"seed": cfg.seed, "stream": "train", "next_epoch": epoch},
        optim={k: v.copy() for k, v in opt.state_tensors().items()},
        optim_step=opt.step_count,
    )


def train(cfg: RunConfig, dataset: FeatureDataset | None = None, *, resume: Checkpoint | None = None,
          stop_epoch: int | None = None, log_path: str | Path | None = None) -> TrainResult:
    """Optimise the weighted objective with AdamW.

    Every epoch draws its shuffling, jitter and dropout from
    ``Stream(seed).split("train", epoch)``, so a run resumed from a
    checkpoint continues exactly where it stopped. ``stop_epoch`` ends the
    run early (after that many epochs in total).
    """
    cfg.validate()
    dataset = dataset if dataset is not None else train_dataset(cfg)
    model = build_model(cfg)
    opt = AdamW(model.trainable(), cfg.optim)
    start = 0
    if resume is not None:
        load_into(model, resume)
        opt.load_state_tensors(resume.optim, resume.optim_step)
        start = resume.epoch
    end = cfg.schedule.total_epochs if stop_epoch is None else min(stop_epoch, cfg.schedule.total_epochs)

    feats = dataset.features.astype(cfg.dtype)
    labels = dataset.labels
    n = len(dataset)
    params = [p for _, p in opt.params]
    history = []
    root = Stream(cfg.seed).split("train")
    for epoch in range(start, end):
        lr = lr_at(epoch, cfg.optim.lr, cfg.schedule)
        stream = root.split(epoch)
        order = stream.split("shuffle").permutation(n)
        sums = dict.fromkeys(("mse", "ce", "prior", "total"), 0.0)
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            try:
                with Graph() as g:
                    out = model.forward(feats[idx], train=True, rng=stream.split("batch", b))
                    terms = model.losses(out, labels[idx])
                grads = g.backward(terms.total, wrt=params)
            except NonFiniteError as err:
                raise TrainingDivergedError(f"epoch {epoch}, batch {b}: {err}") from err
            opt.step(grads, lr)
            for k, v in terms.values().items():
                sums[k] += v * len(idx)
        row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}, "lr": lr}
        history.append(row)
        log.debug("epoch %d total %.5f", epoch, row["total"])

    if log_path is not None:
        write_loss_log(log_path, history, append=resume is not None)
    return TrainResult(model, _checkpoint(cfg, model, opt, end), history)


def write_loss_log(path: str | Path, rows: list[dict], append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(LOSS_LOG_HEADER)
        for r in rows:
            w.writerow([r["epoch"], repr(r["mse"]), repr(r["ce"]), repr(r["prior"]), repr(r["total"]), repr(r["lr"])])


def model_from_checkpoint(ckpt: Checkpoint) -> MintAD:
    model = build_model(ckpt.config)
    load_into(model, ckpt)
    return model


def upsample_mask(masks: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-cell upsampling: each output pixel takes the mask of the
    feature cell containing its centre."""
    H, W = masks.shape[-2:]
    ri = np.minimum(((np.arange(out_h) + 0.5) * H / out_h).astype(int), H - 1)
    ci = np.minimum(((np.arange(out_w) + 0.5) * W / out_w).astype(int), W - 1)
    return masks[..., ri[:, None], ci[None, :]]


@dataclass
class EvalResult:
    metrics: dict[str, float]
    image_scores: np.ndarray
    maps: np.ndarray


def evaluate(model: MintAD, dataset: FeatureDataset, cfg: RunConfig, *, dataset_name: str = "synthetic",
             out_dir: str | Path | None = None) -> EvalResult:
    """Eval-mode scoring: per-category and mean I-AUROC and P-AUPR."""
    guard = Stream(cfg.seed).split("eval-guard")
    feats = dataset.features.astype(cfg.dtype)
    recon = model.reconstruct_maps(feats, cfg.batch_size, rng=guard)
    if guard.draws:
        raise RuntimeError("evaluation invoked a stochastic primitive")
    size = cfg.data.image_size
    maps = anomaly_map(feats, recon, size, size).scores
    img_scores = maps.reshape(len(maps), -1).max(axis=1)
    pix_labels = upsample_mask(dataset.masks, size, size)

    metrics = {}
    for k in range(dataset.num_classes):
        sel = dataset.labels == k
        y = dataset.image_labels[sel]
        if 0 < y.sum() < y.size:
            metrics[f"i_auroc/{k}"] = auroc(img_scores[sel], y)
        if pix_labels[sel].any():
            metrics[f"p_aupr/{k}"] = aupr(maps[sel], pix_labels[sel])
    for name in ("i_auroc", "p_aupr"):
        vals = [v for key, v in metrics.items() if key.startswith(name + "/")]
        if vals:
            metrics[f"{name}/mean"] = float(np.mean(vals))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = [(cfg.run_id, dataset_name, cfg.seed, k, v) for k, v in metrics.items()]
        write_metrics_csv(out_dir / "metrics.csv", rows)
        np.save(out_dir / "anomaly_maps.npy", maps.astype(np.float32))
    return EvalResult(metrics, img_scores, maps)


def run_benchmark(cfg: RunConfig, out_dir: str | Path | None = None) -> tuple[TrainResult, EvalResult]:
    """Train on synthetic normals, evaluate on held-out normals and anomalies."""
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        Path(out_dir, "config.ini").write_text(dumps(cfg))
    res = train(cfg, log_path=Path(out_dir, "loss_log.csv") if out_dir else None)
    ev = evaluate(res.model, test_dataset(cfg), cfg, out_dir=out_dir)
    return res, ev
