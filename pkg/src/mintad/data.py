"""Synthetic datasets: 2-D Gaussian-mixture toys and multi-class feature maps.

The feature maps stand in for frozen-backbone features. Each class owns a
smooth per-channel mean field; a normal sample is that field plus i.i.d.
Gaussian noise, and an anomalous sample additionally has a rectangular
region shifted by a fixed vector.

Binary container layout (``.mfd``), all integers little-endian::

    magic     8 bytes   b"MINTFEAT"
    version   uint32    DATASET_VERSION
    hlen      uint32    byte length of the JSON header
    header    hlen      UTF-8 JSON: {"arrays": [[name, shape], ...], "meta": {...}}
    payload   float32 little-endian arrays, concatenated in header order
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .rng import Stream

DATASET_MAGIC = b"MINTFEAT"
DATASET_VERSION = 1


@dataclass(frozen=True)
class MixtureSpec:
    means: tuple[tuple[float, float], ...] = ((-2.0, 0.0), (2.0, 0.0))
    std: float = 0.4
    n_per_class: int = 500
    seed: int = 0

    def __post_init__(self):
        if len(self.means) < 1:
            raise ValueError("a mixture needs at least one component")
        if self.std <= 0:
            raise ValueError(f"std must be positive, got {self.std}")

    @property
    def num_classes(self) -> int:
        return len(self.means)


@dataclass
class ToyDataset2D:
    points: np.ndarray
    class_labels: np.ndarray
    component_spec: MixtureSpec

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "label"])
            for (x, y), c in zip(self.points, self.class_labels):
                w.writerow([repr(float(x)), repr(float(y)), int(c)])


def make_toy_2d(spec: MixtureSpec) -> ToyDataset2D:
    rng = Stream(spec.seed).split("toy2d")
    pts, labels = [], []
    for c, m in enumerate(spec.means):
        z = rng.split(c).normal((spec.n_per_class, 2))
        pts.append(np.asarray(m, dtype=np.float64) + spec.std * z)
        labels.append(np.full(spec.n_per_class, c, dtype=np.int64))
    return ToyDataset2D(np.concatenate(pts), np.concatenate(labels), spec)


def boundary_grid(score_fn: Callable[[np.ndarray], np.ndarray], bounds=(-4.0, 4.0, -4.0, 4.0),
                  resolution: int = 200) -> np.ndarray:
    """Evaluate ``score_fn`` at cell centres of a ``resolution``² grid.

    ``score_fn`` receives an (M, 2) array of points and returns M scores.
    Row ``i`` of the result holds ``y = ymin + (i + 0.5) * dy``, column ``j``
    holds ``x = xmin + (j + 0.5) * dx``.
    """
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    xs, ys = grid_centres(bounds, resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    scores = np.asarray(score_fn(pts), dtype=np.float64).reshape(resolution, resolution)
    return scores


def grid_centres(bounds, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    xmin, xmax, ymin, ymax = bounds
    dx = (xmax - xmin) / resolution
    dy = (ymax - ymin) / resolution
    xs = xmin + (np.arange(resolution) + 0.5) * dx
    ys = ymin + (np.arange(resolution) + 0.5) * dy
    return xs, ys


# ---------------------------------------------------------------------------
# feature maps

@dataclass
class FeatureDataset:
    features: np.ndarray          # (N, C, H, W)
    labels: np.ndarray            # (N,) class ids
    masks: np.ndarray             # (N, H, W) uint8
    image_labels: np.ndarray      # (N,) 0 normal / 1 anomalous
    mean_fields: np.ndarray       # (num_classes, C, H, W)
    noise_std: float
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i):
        return self.features[i], int(self.labels[i]), self.masks[i], int(self.image_labels[i])

    @property
    def num_classes(self) -> int:
        return self.mean_fields.shape[0]

    def subset(self, idx) -> "FeatureDataset":
        idx = np.asarray(idx)
        return FeatureDataset(self.features[idx], self.labels[idx], self.masks[idx],
                              self.image_labels[idx], self.mean_fields, self.noise_std, dict(self.meta))

    def normals(self) -> "FeatureDataset":
        return self.subset(np.flatnonzero(self.image_labels == 0))


def make_mean_fields(num_classes: int, C: int, H: int, W: int, rng: Stream) -> np.ndarray:
    """Per-class, per-channel sum of 4 low-frequency random sinusoids plus an offset."""
    yy, xx = np.meshgrid(np.arange(H) / H, np.arange(W) / W, indexing="ij")
    fields = np.zeros((num_classes, C, H, W))
    for k in range(num_classes):
        r = rng.split(k)
        amp = r.normal((C, 4)) / np.sqrt(2.0)
        fu = r.uniform(-1.5, 1.5, (C, 4))
        fv = r.uniform(-1.5, 1.5, (C, 4))
        phase = r.uniform(0.0, 2 * np.pi, (C, 4))
        offset = 0.5 * r.normal((C,))
        arg = 2 * np.pi * (fu[..., None, None] * xx + fv[..., None, None] * yy) + phase[..., None, None]
        fields[k] = (amp[..., None, None] * np.sin(arg)).sum(axis=1) + offset[:, None, None]
    return fields


def inject_anomaly(f: np.ndarray, region: tuple[int, int, int, int], shift) -> tuple[np.ndarray, np.ndarray]:
    """Add ``shift`` inside the half-open rectangle ``(r0, c0, r1, c1)``.

    ``shift`` is a scalar or a length-C vector. Cells outside the region are
    copied unchanged.
    """
    C, H, W = f.shape
    r0, c0, r1, c1 = (int(v) for v in region)
    if r1 <= r0 or c1 <= c0:
        raise ValueError(f"empty anomaly region {region}")
    if r0 < 0 or c0 < 0 or r1 > H or c1 > W:
        raise ValueError(f"anomaly region {region} outside the {H}x{W} grid")
    shift = np.asarray(shift, dtype=f.dtype)
    if shift.ndim == 0:
        shift = np.full(C, shift, dtype=f.dtype)
    if shift.shape != (C,) or not np.all(np.isfinite(shift)):
        raise ValueError(f"shift must be a finite scalar or length-{C} vector")
    out = f.copy()
    out[:, r0:r1, c0:c1] += shift[:, None, None]
    mask = np.zeros((H, W), dtype=np.uint8)
    mask[r0:r1, c0:c1] = 1
    return out, mask


def random_region(rng: Stream, H: int, W: int, lo: int = 2, hi: int = 5) -> tuple[int, int, int, int]:
    h = int(rng.integers(min(lo, H), min(hi, H) + 1))
    w = int(rng.integers(min(lo, W), min(hi, W) + 1))
    r0 = int(rng.integers(0, H - h + 1))
    c0 = int(rng.integers(0, W - w + 1))
    return r0, c0, r0 + h, c0 + w


def make_feature_dataset(num_classes: int, C: int, H: int, W: int, n_normal: int, n_anomalous: int,
                         seed: int, *, split: str = "train", noise_std: float = 0.2,
                         shift_factor: float = 5.0, mean_fields: np.ndarray | None = None) -> FeatureDataset:
    """Build ``n_normal + n_anomalous`` samples per class.

    Mean fields depend only on ``seed`` (not ``split``), so a train and a
    test set drawn with the same seed share class statistics while their
    noise differs.
    """
    for name, v in (("num_classes", num_classes), ("C", C), ("H", H), ("W", W)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")
    root = Stream(seed)
    if mean_fields is None:
        mean_fields = make_mean_fields(num_classes, C, H, W, root.split("fields"))
    mean_fields = np.asarray(mean_fields, dtype=np.float64)
    if mean_fields.shape != (num_classes, C, H, W):
        raise ValueError(f"mean_fields shape {mean_fields.shape} != {(num_classes, C, H, W)}")

    samples = root.split("samples", split)
    feats, labels, masks, img = [], [], [], []
    for k in range(num_classes):
        r = samples.split(k)
        noise = r.split("noise").normal((n_normal + n_anomalous, C, H, W))
        anomaly_rng = r.split("anomaly")
        for i in range(n_normal + n_anomalous):
            f = mean_fields[k] + noise_std * noise[i]
            mask = np.zeros((H, W), dtype=np.uint8)
            if i >= n_normal:
                region = random_region(anomaly_rng, H, W)
                signs = np.where(anomaly_rng.random(C) < 0.5, -1.0, 1.0)
                f, mask = inject_anomaly(f, region, shift_factor * noise_std * signs)
            feats.append(f)
            labels.append(k)
            masks.append(mask)
            img.append(int(i >= n_normal))
    return FeatureDataset(
        np.stack(feats) if feats else np.zeros((0, C, H, W)),
        np.asarray(labels, dtype=np.int64),
        np.stack(masks) if masks else np.zeros((0, H, W), dtype=np.uint8),
        np.asarray(img, dtype=np.int64),
        mean_fields,
        float(noise_std),
        {"seed": seed, "split": split, "shift_factor": shift_factor},
    )


class DatasetFormatError(ValueError):
    pass


def save_feature_dataset(ds: FeatureDataset, path: str | Path) -> None:
    arrays = [
        ("features", ds.features),
        ("labels", ds.labels),
        ("masks", ds.masks),
        ("image_labels", ds.image_labels),
        ("mean_fields", ds.mean_fields),
    ]
    header = {
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "meta": {"noise_std": ds.noise_std, **ds.meta},
    }
    hbytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", DATASET_VERSION, len(hbytes)))
        fh.write(hbytes)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_feature_dataset(path: str | Path) -> FeatureDataset:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:8] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: not a feature dataset container")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if len(blob) < 16 + hlen:
        raise DatasetFormatError(f"{path}: truncated header")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    pos = 16 + hlen
    out = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) * 4
        if pos + n > len(blob):
            raise DatasetFormatError(f"{path}: truncated payload in {name!r}")
        out[name] = np.frombuffer(blob, dtype="<f4", count=n // 4, offset=pos).reshape(shape)
        pos += n
    meta = dict(header["meta"])
    noise_std = float(meta.pop("noise_std"))
    return FeatureDataset(
        out["features"].astype(np.float32),
        out["labels"].astype(np.int64),
        out["masks"].astype(np.uint8),
        out["image_labels"].astype(np.int64),
        out["mean_fields"].astype(np.float32),
        noise_std,
        meta,
    )
