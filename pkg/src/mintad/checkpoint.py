"""Versioned binary checkpoint container.

Layout, integers little-endian::

    magic     8 bytes   b"MINTCKPT"
    version   uint32    CHECKPOINT_VERSION
    hlen      uint32    byte length of the JSON header
    header    hlen      UTF-8 JSON: config, epoch, rng, optim_step, tensor table
    payload   raw little-endian tensors ("<f4" or "<f8") at the offsets listed
              in the tensor table, relative to the start of the payload

The tensor table is a list of ``[name, dtype, shape, offset, nbytes]``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, from_dict, to_dict

CHECKPOINT_MAGIC = b"MINTCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointMismatchError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    params: dict[str, np.ndarray]
    epoch: int = 0
    rng: dict = field(default_factory=dict)
    optim: dict[str, np.ndarray] = field(default_factory=dict)
    optim_step: int = 0
    version: int = CHECKPOINT_VERSION


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    table, chunks, offset = [], [], 0
    for name, arr in list(ckpt.params.items()) + list(ckpt.optim.items()):
        arr = np.asarray(arr)
        dt = "<f8" if arr.dtype == np.float64 else "<f4"
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        table.append([name, dt, list(arr.shape), offset, len(raw)])
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": to_dict(ckpt.config),
        "epoch": ckpt.epoch,
        "rng": ckpt.rng,
        "optim_step": ckpt.optim_step,
        "n_params": len(ckpt.params),
        "tensors": table,
        "payload_bytes": offset,
    }
    hbytes = json.dumps(header).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", ckpt.version, len(hbytes)))
        fh.write(hbytes)
        for raw in chunks:
            fh.write(raw)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < 16:
        raise CheckpointTruncatedError(f"{path}: file too short for a checkpoint header")
    if blob[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if len(blob) < 16 + hlen:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: corrupt header ({err})") from None
    base = 16 + hlen
    if len(blob) - base < header["payload_bytes"]:
        raise CheckpointTruncatedError(
            f"{path}: payload has {len(blob) - base} bytes, header declares {header['payload_bytes']}")
    tensors = {}
    for name, dt, shape, offset, nbytes in header["tensors"]:
        arr = np.frombuffer(blob, dtype=dt, count=nbytes // np.dtype(dt).itemsize, offset=base + offset)
        tensors[name] = arr.reshape(shape).astype(np.dtype(dt).newbyteorder("="))
    names = [t[0] for t in header["tensors"]]
    n = header["n_params"]
    return Checkpoint(
        config=from_dict(header["config"]),
        params={k: tensors[k] for k in names[:n]},
        epoch=int(header["epoch"]),
        rng=header["rng"],
        optim={k: tensors[k] for k in names[n:]},
        optim_step=int(header["optim_step"]),
        version=version,
    )


def load_into(model, ckpt: Checkpoint) -> None:
    """Copy checkpoint parameters into ``model``; the first tensor whose name
    or shape disagrees raises :class:`CheckpointMismatchError`."""
    own = list(model.named_parameters())
    for name, p in own:
        if name not in ckpt.params:
            raise CheckpointMismatchError(f"tensor {name!r} missing from checkpoint")
        if tuple(ckpt.params[name].shape) != p.shape:
            raise CheckpointMismatchError(
                f"tensor {name!r}: checkpoint shape {tuple(ckpt.params[name].shape)}, model shape {p.shape}")
    extra = [k for k in ckpt.params if k not in dict(own)]
    if extra:
        raise CheckpointMismatchError(f"tensor {extra[0]!r} in checkpoint has no model counterpart")
    for name, p in own:
        p.data = np.array(ckpt.params[name], dtype=p.dtype)
