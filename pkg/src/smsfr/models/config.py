from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..chart import ChartGeometry
from ..errors import ConfigError
from ..multiscale import BASE, feature_weights, num_submaps, resolution, split_dims
from ..seq_features import COLUMNS, ROWS

MODEL_KINDS = ("msr", "smsfr")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "smsfr"
    n: int = 20
    fusion_dim: int = 256
    seq_dim: int = 128
    head_hidden: int = 128
    lam: float = 1.0
    slope: float = 0.01
    seed: int = 0
    msf_channels: tuple[int, int] = (64, 128)
    ts_channels: tuple[int, int] = (128, 256)
    kernel: tuple[int, int] = (5, 3)
    pool: tuple[int, int] = (2, 1)
    price_rows: int = 48
    divider_rows: int = 1
    turnover_rows: int = 15
    dtype: str = "float32"

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.n <= 0 or self.n % BASE:
            raise ConfigError(f"n must be a positive multiple of {BASE}, got {self.n}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        for name in ("msf_channels", "ts_channels", "kernel", "pool"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if min(self.block_dims) < 1:
            raise ConfigError(f"fusion_dim {self.fusion_dim} too small for {self.C} blocks")

    @property
    def C(self) -> int:
        return num_submaps(self.n)

    @property
    def weights(self) -> list[float]:
        return feature_weights(self.C)

    @property
    def resolutions(self) -> list[int]:
        return [resolution(i, self.n) for i in range(1, self.C + 1)]

    @property
    def block_dims(self) -> list[int]:
        return split_dims(self.weights, self.fusion_dim)

    @property
    def geometry(self) -> ChartGeometry:
        return ChartGeometry(self.price_rows, self.divider_rows, self.turnover_rows)

    @property
    def image_shapes(self) -> list[tuple[int, int, int]]:
        geo = self.geometry
        return [(geo.height, geo.fixed_width(BASE, m), 1) for m in self.resolutions]

    @property
    def seq_shape(self) -> tuple[int, int, int]:
        return (ROWS, len(COLUMNS), 1)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("msf_channels", "ts_channels", "kernel", "pool"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 3
    early_stop_start: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError(f"invalid training config {self}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


# learning rate and batch size reported for the full-scale experiments
FULL_SCALE_TRAINING = TrainConfig(lr=3e-5, batch_size=256)
