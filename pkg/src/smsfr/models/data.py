"""Turn Samples into the dense arrays the networks consume."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..chart import render_ohlct
from ..errors import ShapeError
from ..market_data import Sample
from ..multiscale import decompose
from ..seq_features import sample_matrix
from .config import ModelConfig


@dataclass
class EncodedSet:
    images: list[np.ndarray]  # one uint8 (N, H, W, 1) array per sub-map
    seq: np.ndarray  # (N, 30, 12, 1) float64
    y: np.ndarray  # (N,) int64
    r: np.ndarray  # (N,) float64
    symbols: list[str]
    dates: list  # end date per sample

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "EncodedSet":
        idx = np.asarray(idx, dtype=np.intp)
        return EncodedSet(
            [im[idx] for im in self.images], self.seq[idx], self.y[idx], self.r[idx],
            [self.symbols[i] for i in idx], [self.dates[i] for i in idx],
        )


def sample_images(sample: Sample, config: ModelConfig) -> list[np.ndarray]:
    subs = decompose(sample.window, config.n)
    geo = config.geometry
    return [
        render_ohlct(m, geo, resolution=res, symbol=sample.symbol).pixels
        for m, res in zip(subs.maps, subs.resolutions)
    ]


def encode(samples: Sequence[Sample], config: ModelConfig) -> EncodedSet:
    shapes = config.image_shapes
    n = len(samples)
    images = [np.zeros((n, *s), dtype=np.uint8) for s in shapes]
    seq = np.zeros((n, *config.seq_shape))
    y = np.zeros(n, dtype=np.int64)
    r = np.zeros(n)
    for k, s in enumerate(samples):
        if s.n != config.n:
            raise ShapeError(f"sample {s.symbol}@{s.end_date} has window {s.n}, model expects {config.n}")
        for dst, px in zip(images, sample_images(s, config)):
            dst[k, :, :, 0] = px
        seq[k, :, :, 0] = sample_matrix(s).values
        y[k], r[k] = s.y, s.r
    return EncodedSet(images, seq, y, r, [s.symbol for s in samples], [s.end_date for s in samples])
