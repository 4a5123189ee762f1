"""Versioned binary checkpoints.

Layout: 8-byte magic "SSSCKPT1", 64 ascii hex chars of the config
digest, uint32 parameter count, then each parameter in declaration
order as (uint16 name length, utf-8 name, uint8 ndim, uint32 dims...,
float64 little-endian data). A JSON sidecar (<path>.meta.json) carries
the config, vocabulary, label space and seed needed to rebuild the
model before loading weights into it.
"""

import json
import struct

import numpy as np

from .graphs import LabelSpace
from .model import Model, ModelConfig
from .vocab import Vocabulary

MAGIC = b"SSSCKPT1"


class CheckpointError(ValueError):
    pass


def meta_path(path):
    return f"{path}.meta.json"


def save_checkpoint(path, model):
    digest = model.cfg.digest().encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(digest)
        fh.write(struct.pack("<I", len(model.params)))
        for name, tensor in model.params.items():
            encoded = name.encode("utf-8")
            arr = tensor.values
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes(order="C"))
    meta = {
        "config": model.cfg.to_json(),
        "vocab": model.vocab.to_json(),
        "label_space": model.label_space.to_json(),
        "seed": model.seed,
    }
    with open(meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh)


def load_checkpoint(path):
    with open(meta_path(path), encoding="utf-8") as fh:
        meta = json.load(fh)
    cfg = ModelConfig.from_json(meta["config"])
    model = Model(
        cfg,
        Vocabulary.from_json(meta["vocab"]),
        LabelSpace.from_json(meta["label_space"]),
        seed=meta.get("seed", 0),
    )
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        digest = fh.read(64).decode("ascii")
        if digest != cfg.digest():
            raise CheckpointError(f"{path}: config digest mismatch with sidecar metadata")
        (count,) = struct.unpack("<I", fh.read(4))
        if count != len(model.params):
            raise CheckpointError(
                f"{path}: {count} stored parameters, model declares {len(model.params)}"
            )
        for expected_name, tensor in model.params.items():
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            if name != expected_name:
                raise CheckpointError(
                    f"{path}: parameter order mismatch ({name!r} != {expected_name!r})"
                )
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            if shape != tensor.values.shape:
                raise CheckpointError(
                    f"{path}: {name} has shape {shape}, model expects {tensor.values.shape}"
                )
            n_bytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
            data = np.frombuffer(fh.read(n_bytes), dtype="<f8").reshape(shape)
            tensor.replace_values(data)
    return model
