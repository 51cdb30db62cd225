"""Versioned binary checkpoints.

Layout: 8 magic bytes, a little-endian uint64 header length, a UTF-8 JSON
header (sorted keys, so identical contents give identical bytes), then the
raw payload. The header carries the model/grid configuration, the refinement
stage index, and a manifest of named tensors (shape + payload offset); every
tensor is stored row-major as 8-byte little-endian floats. Optimizer moment
estimates ride along under "opt.m.*" / "opt.v.*" names so training can resume
bit-identically.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .grid import GridSpec
from .seqmodel import ModelConfig, SeqModel

_MAGIC = b"TTCKPT01"
_VERSION = 1


@dataclass
class Checkpoint:
    model: SeqModel
    grid: GridSpec
    optimizer_state: Optional[dict]
    stage_index: int
    step_in_stage: int
    extra: dict


def _tensor_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C")


def save_checkpoint(
    path,
    model: SeqModel,
    grid: GridSpec,
    optimizer_state: Optional[dict] = None,
    stage_index: int = 0,
    step_in_stage: int = 0,
    extra: Optional[dict] = None,
) -> None:
    tensors: dict[str, np.ndarray] = {
        name: p.detach().numpy() for name, p in model.named_parameters()
    }
    opt_header = None
    if optimizer_state is not None:
        opt_header = {"step": int(optimizer_state["step"])}
        for name, arr in optimizer_state["m"].items():
            tensors[f"opt.m.{name}"] = np.asarray(arr)
        for name, arr in optimizer_state["v"].items():
            tensors[f"opt.v.{name}"] = np.asarray(arr)

    manifest = []
    offset = 0
    payload = []
    for name in sorted(tensors):
        arr = tensors[name]
        buf = _tensor_bytes(arr)
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.append(buf)
        offset += len(buf)

    header = {
        "version": _VERSION,
        "model": model.config.to_dict(),
        "out_factors": list(model.out_factors),
        "grid": grid.to_dict(),
        "stage_index": int(stage_index),
        "step_in_stage": int(step_in_stage),
        "optimizer": opt_header,
        "extra": extra or {},
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for buf in payload:
            fh.write(buf)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode())
        if header["version"] != _VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        payload = fh.read()

    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).copy()

    config = ModelConfig.from_dict(header["model"])
    model = SeqModel(config, out_factors=tuple(header["out_factors"]))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name not in tensors:
                raise ValueError(f"checkpoint missing tensor {name!r}")
            p.copy_(torch.from_numpy(tensors[name]))

    optimizer_state = None
    if header["optimizer"] is not None:
        m = {n[len("opt.m."):]: a for n, a in tensors.items() if n.startswith("opt.m.")}
        v = {n[len("opt.v."):]: a for n, a in tensors.items() if n.startswith("opt.v.")}
        optimizer_state = {"step": header["optimizer"]["step"], "m": m, "v": v}

    return Checkpoint(
        model=model,
        grid=GridSpec.from_dict(header["grid"]),
        optimizer_state=optimizer_state,
        stage_index=header["stage_index"],
        step_in_stage=header["step_in_stage"],
        extra=header.get("extra", {}),
    )
