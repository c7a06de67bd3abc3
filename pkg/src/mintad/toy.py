"""2-D toy reconstruction models and the decision-boundary experiment.

Four panel models trained on a two-cluster mixture:

* ``vanilla_unified``     plain autoencoder on all clusters
* ``denoising_ensemble``  one denoising AE per cluster, score = min over models
* ``denoising_unified``   one denoising AE on all clusters
* ``mint_unified``        the full MINT-AD pipeline on 1x1, 2-channel feature maps

plus a vanilla/denoising pair trained on a single cluster, which is where the
identity shortcut shows up. Scores are squared reconstruction errors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .config import (DataConfig, LossConfig, ModelConfig, OptimConfig, RunConfig,
                     ScheduleConfig)
from .data import FeatureDataset, MixtureSpec, boundary_grid, grid_centres, make_toy_2d
from .metrics import interference_index, shortcut_index, write_metrics_csv
from .nn import Linear, Module
from .optim import AdamW
from .rng import Stream

log = logging.getLogger(__name__)

ScoreFn = Callable[[np.ndarray], np.ndarray]

PANELS = ("vanilla_single", "denoising_single", "vanilla_unified", "denoising_ensemble",
          "denoising_unified", "mint_unified")


@dataclass
class ToyConfig:
    seed: int = 0
    means: tuple[tuple[float, float], ...] = ((-2.0, 0.0), (2.0, 0.0))
    single_mean: tuple[float, float] = (0.0, 0.0)
    std: float = 0.4
    n_per_class: int = 300
    hidden: int = 64
    noise_std: float = 1.0
    epochs: int = 60
    batch_size: int = 64
    lr: float = 3e-3
    mint_width: int = 16
    mint_epochs: int = 30
    bounds: tuple[float, float, float, float] = (-4.0, 4.0, -4.0, 4.0)
    resolution: int = 80
    region_sigmas: float = 3.0

    @property
    def shortcut_threshold(self) -> float:
        """An error below the squared radius of the normal region counts as
        'reconstructed'."""
        return (self.region_sigmas * self.std) ** 2


class MLPAutoencoder(Module):
    """2 -> hidden -> hidden -> 2 with ReLU, no bottleneck."""

    def __init__(self, hidden: int, rng: Stream, dim: int = 2):
        self.l1 = Linear(dim, hidden, rng.split("l1"))
        self.l2 = Linear(hidden, hidden, rng.split("l2"))
        self.l3 = Linear(hidden, dim, rng.split("l3"))

    def __call__(self, x: Tensor) -> Tensor:
        return self.l3(ad.relu(self.l2(ad.relu(self.l1(x)))))

    def score(self, pts: np.ndarray) -> np.ndarray:
        recon = self(Tensor(np.asarray(pts, dtype=np.float64))).data
        return np.sum((recon - pts) ** 2, axis=1)


def fit_autoencoder(points: np.ndarray, cfg: ToyConfig, noise_std: float, rng: Stream) -> MLPAutoencoder:
    """Minimise |AE(x + n) - x|^2 with n ~ N(0, noise_std^2); noise_std=0
    gives a vanilla autoencoder."""
    model = MLPAutoencoder(cfg.hidden, rng.split("init"))
    opt = AdamW(model.trainable(), OptimConfig(lr=cfg.lr, weight_decay=0.0))
    params = model.parameters()
    n = len(points)
    for epoch in range(cfg.epochs):
        stream = rng.split("epoch", epoch)
        order = stream.split("shuffle").permutation(n)
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            x = points[order[lo:lo + cfg.batch_size]]
            with Graph() as g:
                xin = ad.gaussian_noise(Tensor(x), noise_std, noise_std > 0, stream.split("noise", b))
                err = ad.square(model(xin) - Tensor(x))
                loss = ad.mean(ad.sum_(err, axis=1))
            opt.step(g.backward(loss, wrt=params))
    return model


def ensemble_score(models: list[MLPAutoencoder]) -> ScoreFn:
    return lambda pts: np.min([m.score(pts) for m in models], axis=0)


def mint_toy_config(cfg: ToyConfig, rms: float) -> RunConfig:
    """Small MINT-AD configuration over (N, 2, 1, 1) 'feature maps'.

    Jitter in the pipeline is relative to the per-sample rms, so the scale
    is set to give the same absolute noise as the denoising AEs.
    """
    k = cfg.mint_width
    return RunConfig(
        seed=cfg.seed,
        precision="float64",
        batch_size=cfg.batch_size,
        run_id="toy-mint",
        data=DataConfig(num_classes=len(cfg.means), channels=2, height=1, width=1,
                        n_train=cfg.n_per_class, n_test_normal=0, n_test_anomalous=0),
        model=ModelConfig(width=k, heads=2, enc_depth=1, dec_depth=1, ff_mult=2, dropout=0.0,
                          token_dim=8, classifier_hidden=32, inr_depth=3,
                          jitter_scale=cfg.noise_std / rms),
        loss=LossConfig(prior_reduction="mean"),
        optim=OptimConfig(lr=cfg.lr),
        schedule=ScheduleConfig(total_epochs=cfg.mint_epochs, decay_epoch=cfg.mint_epochs),
    )


def fit_mint(points: np.ndarray, labels: np.ndarray, cfg: ToyConfig):
    from .train import train  # deferred: train imports the full model stack

    rms = float(np.sqrt(np.mean(points ** 2)))
    run = mint_toy_config(cfg, rms)
    n = len(points)
    feats = points.reshape(n, 2, 1, 1)
    ds = FeatureDataset(feats, labels, np.zeros((n, 1, 1), np.uint8), np.zeros(n, np.int64),
                        np.zeros((run.data.num_classes, 2, 1, 1)), 0.0)
    model = train(run, ds).model

    def score(pts: np.ndarray) -> np.ndarray:
        x = np.asarray(pts, dtype=np.float64).reshape(len(pts), 2, 1, 1)
        recon = model.reconstruct_maps(x, batch_size=4096)
        return np.sum((recon - x) ** 2, axis=(1, 2, 3))

    return model, score


def normal_region(means, std: float, sigmas: float, bounds, resolution: int) -> np.ndarray:
    """Grid mask of cells within ``sigmas * std`` of any mean."""
    xs, ys = grid_centres(bounds, resolution)
    gx, gy = np.meshgrid(xs, ys)
    inside = np.zeros(gx.shape, dtype=bool)
    for mx, my in means:
        inside |= (gx - mx) ** 2 + (gy - my) ** 2 <= (sigmas * std) ** 2
    return inside


def write_grid_csv(grid: np.ndarray, path: str | Path) -> None:
    np.savetxt(path, grid, delimiter=",", fmt="%.10g")


def write_pgm(grid: np.ndarray, path: str | Path) -> tuple[float, float]:
    """Binary 8-bit PGM, min-max normalised, +y pointing up.

    The bounds go to ``<path>.norm`` as ``min=<lo> max=<hi>``.
    """
    lo, hi = float(grid.min()), float(grid.max())
    span = hi - lo if hi > lo else 1.0
    img = np.round((grid[::-1] - lo) / span * 255).astype(np.uint8)
    h, w = img.shape
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    Path(str(path) + ".norm").write_text(f"min={lo!r} max={hi!r}\n")
    return lo, hi


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = map(int, dims.split())
    return np.frombuffer(body, dtype=np.uint8, count=w * h).reshape(h, w)


@dataclass
class ToyResult:
    grids: dict[str, np.ndarray]
    metrics: dict[str, float] = field(default_factory=dict)


def toy_boundary_experiment(cfg: ToyConfig, out_dir: str | Path | None = None) -> ToyResult:
    """Train every panel model for one seed, grid their scores and compute
    shortcut and interference indices."""
    root = Stream(cfg.seed).split("toy")
    single = make_toy_2d(MixtureSpec((cfg.single_mean,), cfg.std, cfg.n_per_class, cfg.seed))
    multi = make_toy_2d(MixtureSpec(cfg.means, cfg.std, cfg.n_per_class, cfg.seed))

    fns: dict[str, ScoreFn] = {}
    fns["vanilla_single"] = fit_autoencoder(single.points, cfg, 0.0, root.split("vs")).score
    fns["denoising_single"] = fit_autoencoder(single.points, cfg, cfg.noise_std, root.split("ds")).score
    fns["vanilla_unified"] = fit_autoencoder(multi.points, cfg, 0.0, root.split("vu")).score
    per_class = [fit_autoencoder(multi.points[multi.class_labels == c], cfg, cfg.noise_std, root.split("de", c))
                 for c in range(len(cfg.means))]
    fns["denoising_ensemble"] = ensemble_score(per_class)
    fns["denoising_unified"] = fit_autoencoder(multi.points, cfg, cfg.noise_std, root.split("du")).score
    fns["mint_unified"] = fit_mint(multi.points, multi.class_labels, cfg)[1]

    grids = {name: boundary_grid(fn, cfg.bounds, cfg.resolution) for name, fn in fns.items()}
    metrics = {}
    thr = cfg.shortcut_threshold
    for name, grid in grids.items():
        means = (cfg.single_mean,) if name.endswith("_single") else cfg.means
        mask = normal_region(means, cfg.std, cfg.region_sigmas, cfg.bounds, cfg.resolution)
        metrics[f"shortcut_index/{name}"] = shortcut_index(grid, mask, thr)
        if not name.endswith("_single"):
            metrics[f"interference_index/{name}"] = interference_index(fns[name], cfg.means)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, grid in grids.items():
            write_grid_csv(grid, out / f"{name}.csv")
            write_pgm(grid, out / f"{name}.pgm")
        rows = [("toy", "toy2d", cfg.seed, k, v) for k, v in metrics.items()]
        write_metrics_csv(out / "metrics.csv", rows)
    log.info("toy seed %d: %s", cfg.seed, metrics)
    return ToyResult(grids, metrics)
