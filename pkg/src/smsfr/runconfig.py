"""The single run configuration tree behind every CLI command.

A YAML file supplies any subset of the tree; command-line flags override
individual keys; everything else takes the defaults below. The effective
tree is written next to each output.
"""

from __future__ import annotations

import copy
import datetime as dt
from pathlib import Path
from typing import Any

import yaml

from .backtest import BacktestConfig
from .chart import ChartGeometry
from .errors import ConfigError, DomainError
from .market_data import SynthConfig
from .models.config import ModelConfig, TrainConfig

DEFAULTS: dict[str, Any] = {
    "paths": {"data": None, "out": "out"},
    "window": {"n": 20, "horizon": 5, "limit": 0.10},
    "geometry": {"price_rows": 48, "divider_rows": 1, "turnover_rows": 15},
    "model": {
        "kind": "smsfr",
        "fusion_dim": 256,
        "seq_dim": 128,
        "head_hidden": 128,
        "lambda": 1.0,
        "slope": 0.01,
        "msf_channels": [64, 128],
        "ts_channels": [128, 256],
        "dtype": "float32",
    },
    "training": {
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "batch_size": 64,
        "max_epochs": 20,
        "patience": 3,
        "early_stop_start": 5,
    },
    # explicit boundary dates win; otherwise end-date quantiles of the samples
    "split": {"train_end": None, "val_end": None, "train_frac": 0.6, "val_frac": 0.2},
    "backtest": {"threshold": 0.80, "cost": 0.003, "max_positions": 5, "hold_days": 5, "initial_capital": 1_000_000.0},
    "synth": {
        "symbols": 50,
        "days": 600,
        "planted": None,
        "volatility": 0.01,
        "idio_ratio": 1.0,
        "drift": 0.0,
        "planted_horizon": 5,
        "planted_margin": 0.003,
        "label_noise": 0.0,
    },
    "seed": 0,
    "seeds": [0],
}

# flag name -> path in the tree
FLAG_KEYS = {
    "n": ("window", "n"),
    "horizon": ("window", "horizon"),
    "seed": ("seed",),
    "lambda": ("model", "lambda"),
    "threshold": ("backtest", "threshold"),
    "cost": ("backtest", "cost"),
    "max_positions": ("backtest", "max_positions"),
    "days": ("synth", "days"),
    "symbols": ("synth", "symbols"),
    "planted": ("synth", "planted"),
}


def _merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be a mapping")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


def _set(tree: dict, path: tuple[str, ...], value) -> None:
    node = tree
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value


def load_tree(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults <- YAML file <- flag overrides (flags named as in FLAG_KEYS)."""
    tree = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: not valid YAML: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        tree = _merge(tree, loaded)
    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        if flag not in FLAG_KEYS:
            raise ConfigError(f"unknown override {flag!r}")
        _set(tree, FLAG_KEYS[flag], value)
    if "seed" in (overrides or {}) and overrides["seed"] is not None:
        tree["seeds"] = [overrides["seed"]]
    return tree


def _date(value, name):
    if value is None or isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{name} must be an ISO date, got {value!r}") from None


class RunConfig:
    """Typed, validated view over the tree."""

    def __init__(self, tree: dict):
        self.tree = tree
        try:
            self._build()
        except (DomainError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def _build(self):
        t = self.tree
        w, m, tr, g = t["window"], t["model"], t["training"], t["geometry"]
        self.n = int(w["n"])
        self.horizon = int(w["horizon"])
        self.limit = float(w["limit"])
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        self.seeds = [int(s) for s in t["seeds"]]
        self.seed = int(t["seed"])
        self.geometry = ChartGeometry(int(g["price_rows"]), int(g["divider_rows"]), int(g["turnover_rows"]))
        self.model_kwargs = dict(
            kind=m["kind"], n=self.n, fusion_dim=int(m["fusion_dim"]), seq_dim=int(m["seq_dim"]),
            head_hidden=int(m["head_hidden"]), lam=float(m["lambda"]), slope=float(m["slope"]),
            msf_channels=tuple(m["msf_channels"]), ts_channels=tuple(m["ts_channels"]),
            price_rows=self.geometry.price_rows, divider_rows=self.geometry.divider_rows,
            turnover_rows=self.geometry.turnover_rows, dtype=m["dtype"],
        )
        self.model(self.seeds[0] if self.seeds else 0)  # validate
        self.training = {k: tr[k] for k in DEFAULTS["training"]}
        self.train_config(0)
        s = t["split"]
        self.train_end, self.val_end = _date(s["train_end"], "split.train_end"), _date(s["val_end"], "split.val_end")
        if (self.train_end is None) != (self.val_end is None):
            raise ConfigError("split.train_end and split.val_end must be given together")
        self.train_frac, self.val_frac = float(s["train_frac"]), float(s["val_frac"])
        if not (0 < self.train_frac and 0 < self.val_frac and self.train_frac + self.val_frac < 1):
            raise ConfigError("split fractions must be positive and sum to less than 1")
        b = t["backtest"]
        self.backtest = BacktestConfig(
            max_positions=int(b["max_positions"]), entry_threshold=float(b["threshold"]),
            hold_days=int(b["hold_days"]), cost=float(b["cost"]), initial_capital=float(b["initial_capital"]),
        )
        sy = t["synth"]
        self.synth_symbols, self.synth_days = int(sy["symbols"]), int(sy["days"])
        if self.synth_symbols < 1:
            raise ConfigError("synth.symbols must be >= 1")
        self.synth = SynthConfig(
            volatility=float(sy["volatility"]), idio_ratio=float(sy["idio_ratio"]), drift=float(sy["drift"]),
            planted=sy["planted"], planted_horizon=int(sy["planted_horizon"]),
            planted_margin=float(sy["planted_margin"]), label_noise=float(sy["label_noise"]),
        )
        if sy["planted"] not in (None, "momentum", "reversal"):
            raise ConfigError(f"synth.planted must be null, momentum or reversal, got {sy['planted']!r}")

    def model(self, seed: int) -> ModelConfig:
        return ModelConfig(seed=seed, **self.model_kwargs)

    def train_config(self, seed: int) -> TrainConfig:
        tr = self.training
        return TrainConfig(
            lr=float(tr["lr"]), beta1=float(tr["beta1"]), beta2=float(tr["beta2"]), eps=float(tr["eps"]),
            batch_size=int(tr["batch_size"]), max_epochs=int(tr["max_epochs"]), patience=int(tr["patience"]),
            early_stop_start=int(tr["early_stop_start"]), seed=seed,
        )


def dump_tree(tree: dict, path: str | Path) -> None:
    def plain(v):
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        if isinstance(v, dt.date):
            return v.isoformat()
        return v

    Path(path).write_text(yaml.safe_dump(plain(tree), sort_keys=True))
