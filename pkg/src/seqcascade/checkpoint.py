"""Single-file checkpoint container.

Layout: an 8-byte magic, a little-endian uint64 header length, a UTF-8 JSON
header (config echo, vocabulary, schemas, parameter manifest), then the raw
parameter bytes in manifest order.  Writing is fully deterministic, so equal
models produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .corpus import LevelSchema, Vocabulary
from .errors import CheckpointError, SchemaError
from .model import CascadeModel, build_model

MAGIC = b"SQCCKPT1"


@dataclass
class Checkpoint:
    config: ModelConfig
    vocab: Vocabulary
    schemas: list[LevelSchema]
    params: dict[str, np.ndarray]

    @classmethod
    def from_model(cls, model: CascadeModel) -> "Checkpoint":
        params = {name: t.data.copy() for name, t in model.parameters().items()}
        return cls(model.config, model.vocab, model.schemas, params)

    def build_model(self) -> CascadeModel:
        model = build_model(self.config, self.schemas, self.vocab)
        assign_parameters(model, self.params)
        return model

    def ensure_task_order(self, tasks: list[str]) -> None:
        if list(tasks) != list(self.config.tasks):
            raise SchemaError(
                f"checkpoint task order {self.config.tasks} does not match "
                f"declared order {list(tasks)}"
            )


def assign_parameters(model: CascadeModel, params: dict[str, np.ndarray]) -> None:
    targets = model.parameters()
    missing = sorted(set(targets) - set(params))
    extra = sorted(set(params) - set(targets))
    if missing or extra:
        raise CheckpointError(
            f"parameter set mismatch (missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name, tensor in targets.items():
        arr = params[name]
        if tuple(arr.shape) != tensor.data.shape:
            raise CheckpointError(
                f"parameter {name} has shape {arr.shape}, expected {tensor.data.shape}"
            )
        tensor.data = np.asarray(arr, dtype=ad.default_dtype()).copy()


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    manifest = []
    blobs = []
    for name, arr in checkpoint.params.items():
        arr = np.ascontiguousarray(arr)
        manifest.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "format": 1,
        "config": checkpoint.config.to_dict(),
        "vocab": {
            "symbols": checkpoint.vocab.symbols,
            "counts": checkpoint.vocab.counts,
        },
        "schemas": [s.to_dict() for s in checkpoint.schemas],
        "params": manifest,
    }
    payload = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(len(MAGIC))
            if magic != MAGIC:
                raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
            (header_len,) = struct.unpack("<Q", _read_exact(fh, 8, path))
            header = json.loads(_read_exact(fh, header_len, path).decode("utf-8"))
            if header.get("format") != 1:
                raise CheckpointError(
                    f"{path}: unsupported checkpoint format {header.get('format')!r}"
                )
            params: dict[str, np.ndarray] = {}
            for entry in header["params"]:
                dtype = np.dtype(entry["dtype"])
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = _read_exact(fh, count * dtype.itemsize, path)
                params[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint ({e})") from e
    config = ModelConfig.from_dict(header["config"])
    vocab = Vocabulary(header["vocab"]["symbols"], header["vocab"]["counts"])
    schemas = [LevelSchema.from_dict(d) for d in header["schemas"]]
    return Checkpoint(config=config, vocab=vocab, schemas=schemas, params=params)


def _read_exact(fh, n: int, path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"{path}: truncated checkpoint")
    return data
