"""Checkpoint container and its on-disk format.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
(format version, config, tensor table, history), then the tensor blob in
little-endian byte order at the offsets listed in the header.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointFormatError, ConfigError, IncompatibleVersionError
from .config import ModelConfig, TrainConfig

MAGIC = b"SMSFRCK\x00"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    seed: int = 0
    train_config: TrainConfig | None = None

    def header(self) -> dict:
        tensors, offset = [], 0
        for name, arr in self.params.items():
            nbytes = arr.size * arr.itemsize
            tensors.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.newbyteorder("<").str,
                            "offset": offset, "nbytes": nbytes})
            offset += nbytes
        return {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "train_config": self.train_config.to_dict() if self.train_config else None,
            "tensors": tensors,
            "history": self.history,
            "best_epoch": self.best_epoch,
            "seed": self.seed,
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        blob = b"".join(np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes() for a in self.params.values())
        return MAGIC + struct.pack("<Q", len(head)) + head + blob

    @classmethod
    def from_bytes(cls, data: bytes, expected: ModelConfig | None = None) -> "Checkpoint":
        if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
            raise CheckpointFormatError("not a checkpoint file (bad magic or truncated)")
        (hlen,) = struct.unpack("<Q", data[len(MAGIC) : len(MAGIC) + 8])
        start = len(MAGIC) + 8
        if start + hlen > len(data):
            raise CheckpointFormatError("truncated header")
        try:
            head = json.loads(data[start : start + hlen].decode("utf-8"))
        except ValueError as exc:
            raise CheckpointFormatError(f"corrupt header: {exc}") from None
        version = head.get("format_version")
        if version != FORMAT_VERSION:
            raise IncompatibleVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
        config = ModelConfig.from_dict(head["config"])
        if expected is not None and config != expected:
            raise ConfigError("checkpoint was trained with a different model configuration")
        blob = data[start + hlen :]
        params = {}
        for t in head["tensors"]:
            end = t["offset"] + t["nbytes"]
            if end > len(blob):
                raise CheckpointFormatError(f"truncated tensor data for {t['name']}")
            arr = np.frombuffer(blob[t["offset"] : end], dtype=np.dtype(t["dtype"])).reshape(t["shape"])
            params[t["name"]] = arr.astype(arr.dtype.newbyteorder("="))
        if sum(t["nbytes"] for t in head["tensors"]) != len(blob):
            raise CheckpointFormatError("trailing or missing tensor bytes")
        tc = head.get("train_config")
        return cls(config, params, head["history"], head["best_epoch"], head["seed"],
                   TrainConfig.from_dict(tc) if tc else None)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path: str | os.PathLike, expected: ModelConfig | None = None) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes(), expected)
