"""Binary checkpoint format, version tag "ICC1".

Layout: 4-byte magic, uint32 little-endian header length, UTF-8 JSON header
{config, step, seed, tensors}, then raw little-endian float32 tensor data
in parameter declaration order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import ModelConfig
from .network import Transformer

MAGIC = b"ICC1"


class CorruptCheckpoint(ValueError):
    """File is not a valid checkpoint."""


def save_checkpoint(path, model: Transformer, step: int = 0, extra: dict | None = None) -> None:
    header = {
        "config": model.config.to_dict(),
        "step": int(step),
        "seed": model.config.seed,
        "tensors": [
            {"name": name, "shape": list(arr.shape)}
            for name, arr in model.params.items()
        ],
    }
    if extra:
        clash = set(extra) & set(header)
        if clash:
            raise ValueError(f"extra keys shadow reserved header fields: {sorted(clash)}")
        header.update(extra)
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in model.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[Transformer, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CorruptCheckpoint(f"bad magic {magic!r}, expected {MAGIC!r}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise CorruptCheckpoint("truncated header length")
        (hlen,) = struct.unpack("<I", raw_len)
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise CorruptCheckpoint("truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorruptCheckpoint(f"unreadable header: {e}") from e
        config = ModelConfig.from_dict(header["config"])
        params = {}
        for spec in header["tensors"]:
            shape = tuple(int(s) for s in spec["shape"])
            n = int(np.prod(shape)) if shape else 1
            data = fh.read(4 * n)
            if len(data) != 4 * n:
                raise CorruptCheckpoint(f"truncated tensor {spec['name']}")
            params[spec["name"]] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
        model = Transformer(config, dtype=np.float32, params=params)
        expected = Transformer(config).param_names()
        if model.param_names() != expected:
            raise CorruptCheckpoint("tensor manifest does not match the config")
    return model, header
