"""Mini-batch training with Adam and validation-loss early stopping, plus
batch inference from checkpoints."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..backtest import ppv_npv
from ..errors import ConfigError, TrainingError
from ..market_data import DatasetSplit, Sample
from ..nn import Adam
from .checkpoint import Checkpoint
from .config import ModelConfig, TrainConfig
from .data import EncodedSet, encode
from .network import MultiScaleNet

logger = logging.getLogger(__name__)


def build_model(ckpt: Checkpoint) -> MultiScaleNet:
    net = MultiScaleNet(ckpt.config)
    net.load_parameters(ckpt.params)
    return net


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def run_inference(net: MultiScaleNet, data: EncodedSet, batch_size: int = 256):
    """Returns (P(up) per sample, r_hat per sample or None)."""
    probs, rhats = [], []
    for sl in _batches(len(data), batch_size):
        p, r = net.predict_proba([im[sl] for im in data.images], data.seq[sl] if net.ts else None)
        probs.append(p[:, 1])
        if r is not None:
            rhats.append(r)
    if not probs:
        return np.zeros(0), (np.zeros(0) if net.ts else None)
    return np.concatenate(probs), (np.concatenate(rhats) if rhats else None)


def evaluate(net: MultiScaleNet, data: EncodedSet, batch_size: int = 256) -> dict:
    """Loss components and classification metrics over a whole set (no gradients)."""
    n = len(data)
    ce_sum = mse_sum = 0.0
    preds = []
    for sl in _batches(n, batch_size):
        out = net.loss([im[sl] for im in data.images], data.seq[sl] if net.ts else None,
                       data.y[sl], data.r[sl], backward=False)
        k = sl.stop - sl.start
        ce_sum += out["ce"] * k
        if out["mse"] is not None:
            mse_sum += out["mse"] * k
        # argmax with ties to class 0
        preds.append((out["probs"][:, 1] > out["probs"][:, 0]).astype(np.int64))
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    ce = ce_sum / n if n else math.nan
    mse = mse_sum / n if (n and net.ts) else None
    loss = ce + net.config.lam * mse if mse is not None else ce
    m = ppv_npv(pred, data.y) if n else None
    return {
        "loss": loss,
        "ce": ce,
        "mse": mse,
        "accuracy": float(np.mean(pred == data.y)) if n else None,
        "ppv": m.ppv if m else None,
        "npv": m.npv if m else None,
    }


def train(
    config: ModelConfig,
    split: DatasetSplit | None = None,
    train_config: TrainConfig | None = None,
    *,
    train_set: EncodedSet | None = None,
    val_set: EncodedSet | None = None,
) -> Checkpoint:
    """Train from scratch and return the checkpoint of the selected epoch.

    Selection: from epoch `early_stop_start` on, keep the epoch with the lowest
    validation loss and stop after `patience` epochs without improvement. If
    training ends before that epoch, the last epoch is returned.
    """
    tc = train_config or TrainConfig()
    if train_set is None or val_set is None:
        if split is None:
            raise ConfigError("train needs a DatasetSplit or pre-encoded train/validation sets")
        train_set = encode(split.train, config) if train_set is None else train_set
        val_set = encode(split.validation, config) if val_set is None else val_set
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("train and validation sets must be non-empty")

    net = MultiScaleNet(config)
    params = net.parameters()
    opt = Adam(params, tc.lr, tc.beta1, tc.beta2, tc.eps)
    rng = np.random.default_rng(tc.seed)
    use_seq = config.kind == "smsfr"

    def record(epoch, train_loss):
        val = evaluate(net, val_set)
        entry = {"epoch": epoch, "train_loss": train_loss, **{f"val_{k}": v for k, v in val.items()}}
        history.append(entry)
        logger.info("epoch %d train_loss=%s val_loss=%.6f val_acc=%.4f", epoch, train_loss, val["loss"], val["accuracy"])
        return val

    history: list[dict] = []
    record(0, None)
    best_epoch, best_loss, best_params, wait = None, math.inf, None, 0
    epoch = 0
    for epoch in range(1, tc.max_epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for b, sl in enumerate(_batches(len(order), tc.batch_size), start=1):
            idx = order[sl]
            net.zero_grad()
            out = net.loss([im[idx] for im in train_set.images], train_set.seq[idx] if use_seq else None,
                           train_set.y[idx], train_set.r[idx])
            if not math.isfinite(out["loss"]):
                raise TrainingError(f"non-finite loss {out['loss']}", epoch=epoch, batch=b)
            opt.step(params, net.gradients())
            total += out["loss"] * len(idx)
        val = record(epoch, total / len(train_set))
        if not math.isfinite(val["loss"]):
            raise TrainingError(f"non-finite validation loss {val['loss']}", epoch=epoch)
        if epoch >= tc.early_stop_start:
            if val["loss"] < best_loss:
                best_epoch, best_loss, wait = epoch, val["loss"], 0
                best_params = {k: p.copy() for k, p in params.items()}
            else:
                wait += 1
                if wait >= tc.patience:
                    break
    if best_params is None:
        best_epoch, best_params = epoch, {k: p.copy() for k, p in params.items()}
    return Checkpoint(config, best_params, history, best_epoch, config.seed, tc)


@dataclass(frozen=True)
class Prediction:
    symbol: str
    date: object
    p_up: float
    r_hat: float | None
    label: int  # predicted class, argmax with ties to 0


def predict(ckpt: Checkpoint, samples: Sequence[Sample] | EncodedSet, batch_size: int = 256) -> list[Prediction]:
    data = samples if isinstance(samples, EncodedSet) else encode(samples, ckpt.config)
    if len(data) == 0:
        return []
    net = build_model(ckpt)
    p_up, r_hat = run_inference(net, data, batch_size)
    return [
        Prediction(data.symbols[k], data.dates[k], float(p_up[k]),
                   float(r_hat[k]) if r_hat is not None else None, int(p_up[k] > 0.5))
        for k in range(len(data))
    ]
