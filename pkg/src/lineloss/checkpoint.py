"""Binary checkpoint: magic header, JSON metadata, then named little-endian float64 arrays."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .features import MinMaxScaler
from .model import ForecastModel, ModelConfig

MAGIC = b"LLCKPT01"


def save_checkpoint(path, model: ForecastModel, scaler: MinMaxScaler | None = None,
                    extra: dict | None = None) -> None:
    state = model.state_dict()
    names = sorted(state)
    meta = {
        "config": model.config.to_dict(),
        "scaler": scaler.to_dict() if scaler is not None else None,
        "adjacency": model.adjacency.tolist(),
        "arrays": [[n, list(state[n].shape)] for n in names],
        "extra": extra or {},
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(state[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ForecastModel, MinMaxScaler | None, dict]:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise SchemaError(f"{path}: not a model checkpoint (bad magic header)")
    pos = len(MAGIC)
    try:
        (size,) = struct.unpack_from("<Q", raw, pos)
        meta = json.loads(raw[pos + 8:pos + 8 + size].decode("utf-8"))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: corrupt checkpoint header ({exc})") from None
    pos += 8 + size
    state = {}
    for name, shape in meta["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        end = pos + 8 * count
        if end > len(raw):
            raise SchemaError(f"{path}: truncated at array {name}")
        state[name] = np.frombuffer(raw[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
        pos = end
    if pos != len(raw):
        raise SchemaError(f"{path}: {len(raw) - pos} trailing bytes")
    model = ForecastModel(ModelConfig.from_dict(meta["config"]), np.asarray(meta["adjacency"]))
    model.load_state_dict(state)
    scaler = MinMaxScaler.from_dict(meta["scaler"]) if meta["scaler"] is not None else None
    return model, scaler, meta.get("extra", {})
