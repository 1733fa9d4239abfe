"""Toy-model checkpoint container.

Layout: magic "TCKP" | header_len u32 LE | header JSON (UTF-8) | raw
tensors, float64 little-endian, in manifest order. The header carries the
model config, the active scaling method, and per-tensor sha256 digests so
round-trips are verifiable.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import FormatError
from ..rope import Method, ScalingMethod
from .model import ToyModel, ToyModelConfig

MAGIC = b"TCKP"


def parameter_digest(params: dict) -> str:
    """Order-independent digest over named parameter tensors."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(params[name].astype("<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(model: ToyModel, path) -> None:
    manifest = [
        {"name": name, "shape": list(model.params[name].shape),
         "sha256": hashlib.sha256(model.params[name].astype("<f8").tobytes()).hexdigest()}
        for name in sorted(model.params)
    ]
    header = {
        "config": model.config.as_dict(),
        "context_length": model.context_length,
        "scaling": {
            "variant": model.scaling.variant.value,
            "s": model.scaling.s,
            "alpha": model.scaling.alpha,
            "beta": model.scaling.beta,
            "explicit_theta": model.scaling.explicit_theta,
            "mscale_enabled": model.scaling.mscale_enabled,
        },
        "manifest": manifest,
        "digest": parameter_digest(model.params),
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for rec in manifest:
            fh.write(model.params[rec["name"]].astype("<f8").tobytes())


def load_checkpoint(path) -> ToyModel:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise FormatError(f"{path}: bad checkpoint magic")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        params = {}
        for rec in header["manifest"]:
            shape = tuple(rec["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise FormatError(f"{path}: truncated tensor {rec['name']!r}")
            arr = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
            if hashlib.sha256(arr.astype("<f8").tobytes()).hexdigest() != rec["sha256"]:
                raise FormatError(f"{path}: digest mismatch for tensor {rec['name']!r}")
            params[rec["name"]] = arr.copy()
    cfg = ToyModelConfig(**header["config"])
    sc = header["scaling"]
    scaling = ScalingMethod(
        variant=Method(sc["variant"]), s=sc["s"], alpha=sc["alpha"], beta=sc["beta"],
        explicit_theta=sc["explicit_theta"], mscale_enabled=sc["mscale_enabled"],
    )
    model = ToyModel(config=cfg, params=params,
                     context_length=header["context_length"], scaling=scaling)
    if parameter_digest(model.params) != header["digest"]:
        raise FormatError(f"{path}: aggregate parameter digest mismatch")
    return model
