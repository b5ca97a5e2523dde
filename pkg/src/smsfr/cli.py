"""Command-line entry point: one YAML config plus flag overrides per run.

Exit status: 0 success, 1 any other failure, 2 usage / unknown command,
3 invalid config, 4 missing input file.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import math
import sys
from pathlib import Path

from . import runconfig
from .backtest import Signal, format_signals, index_metrics, parse_signals, run_backtest
from .chart import IMAGE_FORMATS, OHLCTUnit, render_ohlct, write_image
from .errors import ConfigError, SmsfrError
from .market_data import (
    DatasetSplit,
    format_bars,
    group_by_symbol,
    make_samples,
    parse_bars,
    split_by_date,
    synth_universe,
)
from .models import evaluate, load_checkpoint, predict, save_checkpoint, train
from .models.data import encode
from .models.training import build_model
from .models.verify import run_all
from .multiscale import decompose

logger = logging.getLogger("smsfr")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3, 4
COMMANDS = ("ingest", "synth", "render", "decompose", "train", "evaluate", "backtest", "gradcheck")


class UsageError(Exception):
    pass


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.tree["paths"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    runconfig.dump_tree(cfg.tree, out / "config.yaml")
    return out


def _data_path(args, cfg) -> Path:
    path = args.data or cfg.tree["paths"]["data"]
    if path is None:
        raise ConfigError("no bar data given (use --data or paths.data)")
    p = Path(path)
    if p.is_dir():
        p = p / "bars.csv"
    if not p.is_file():
        raise FileNotFoundError(f"bar data not found: {p}")
    return p


def _load_bars(args, cfg):
    return group_by_symbol(parse_bars(_data_path(args, cfg).read_text()))


def _window(groups, symbol, end, n):
    """The n bars of `symbol` ending on `end` (default: the last bar)."""
    if symbol is None:
        symbol = sorted(groups)[0]
    if symbol not in groups:
        raise UsageError(f"unknown symbol {symbol!r}")
    bars = groups[symbol]
    stop = len(bars)
    if end is not None:
        dates = [b.date for b in bars]
        if end not in dates:
            raise UsageError(f"{symbol} has no bar on {end}")
        stop = dates.index(end) + 1
    if stop < n:
        raise UsageError(f"{symbol} has only {stop} bars up to the chosen date, need {n}")
    return symbol, bars[stop - n : stop]


def _samples(groups, cfg):
    out = []
    for sym in sorted(groups):
        out.extend(make_samples(groups[sym], cfg.n, cfg.horizon, cfg.limit))
    if not out:
        raise ConfigError(f"no samples at n={cfg.n}, horizon={cfg.horizon}")
    return out


def make_split(samples, cfg) -> DatasetSplit:
    """Explicit boundary dates, or quantiles of the distinct sample end dates."""
    if cfg.train_end is not None:
        return split_by_date(samples, cfg.train_end, cfg.val_end)
    dates = sorted({s.end_date for s in samples})
    if len(dates) < 3:
        raise ConfigError("need at least 3 distinct sample dates to split")
    k_train = max(1, math.ceil(cfg.train_frac * len(dates))) - 1
    k_val = max(k_train + 1, math.ceil((cfg.train_frac + cfg.val_frac) * len(dates)) - 1)
    return split_by_date(samples, dates[k_train], dates[min(k_val, len(dates) - 2)])


# --- commands -------------------------------------------------------------

def cmd_synth(args, cfg):
    out = _out_dir(args, cfg)
    universe = synth_universe(cfg.seed, cfg.synth_symbols, cfg.synth_days, cfg.synth)
    bars = [b for sym in sorted(universe) for b in universe[sym]]
    (out / "bars.csv").write_text(format_bars(bars))
    print(f"wrote {len(bars)} bars for {len(universe)} symbols to {out / 'bars.csv'}")


def cmd_ingest(args, cfg):
    bars = parse_bars(_data_path(args, cfg).read_text())
    out = _out_dir(args, cfg)
    (out / "bars.csv").write_text(format_bars(bars))
    groups = group_by_symbol(bars)
    summary = {
        "symbols": len(groups),
        "bars": len(bars),
        "per_symbol": {
            sym: {"bars": len(b), "start": b[0].date.isoformat(), "end": b[-1].date.isoformat()}
            for sym, b in sorted(groups.items())
        },
    }
    _dump_json(summary, out / "summary.json")
    print(f"validated {len(bars)} bars for {len(groups)} symbols")


def cmd_render(args, cfg):
    groups = _load_bars(args, cfg)
    symbol, window = _window(groups, args.symbol, args.end, cfg.n)
    out = _out_dir(args, cfg)
    ext = "pgm" if args.format == "pgm" else "raw"
    stem = f"{symbol}_{window[-1].date.isoformat()}_n{cfg.n}"
    if args.submaps:
        subs = decompose(window, cfg.n)
        for i, (units, res) in enumerate(zip(subs.maps, subs.resolutions), start=1):
            img = render_ohlct(units, cfg.geometry, resolution=res, symbol=symbol)
            write_image(img, out / f"{stem}_x{i}.{ext}", args.format)
            print(f"x{i}: {img.shape[0]}x{img.shape[1]} (resolution {res})")
    else:
        img = render_ohlct([OHLCTUnit.from_bar(b) for b in window], cfg.geometry, symbol=symbol)
        write_image(img, out / f"{stem}.{ext}", args.format)
        print(f"{stem}: {img.shape[0]}x{img.shape[1]}")


def cmd_decompose(args, cfg):
    groups = _load_bars(args, cfg)
    symbol, window = _window(groups, args.symbol, args.end, cfg.n)
    out = _out_dir(args, cfg)
    payload = {"symbol": symbol, **decompose(window, cfg.n).to_dict()}
    path = out / f"{symbol}_{window[-1].date.isoformat()}_n{cfg.n}.json"
    _dump_json(payload, path)
    print(f"wrote {path}")


def _metrics(stats: dict) -> dict:
    return {k: stats[k] for k in ("accuracy", "ppv", "npv", "loss", "ce", "mse")}


def _mean(values):
    values = [v for v in values if v is not None]
    return math.fsum(values) / len(values) if values else None


def cmd_train(args, cfg):
    if not cfg.seeds:
        raise ConfigError("seeds must be non-empty for train")
    groups = _load_bars(args, cfg)
    split = make_split(_samples(groups, cfg), cfg)
    out = _out_dir(args, cfg)
    model0 = cfg.model(cfg.seeds[0])
    train_set, val_set, test_set = (encode(s, model0) for s in (split.train, split.validation, split.test))
    runs = []
    for seed in cfg.seeds:
        ckpt = train(cfg.model(seed), train_config=cfg.train_config(seed), train_set=train_set, val_set=val_set)
        save_checkpoint(ckpt, out / f"seed{seed}.ckpt")
        test = _metrics(evaluate(build_model(ckpt), test_set)) if len(test_set) else None
        preds = predict(ckpt, test_set) if len(test_set) else []
        (out / f"signals_seed{seed}.csv").write_text(
            format_signals(Signal(p.date, p.symbol, p.p_up, p.r_hat) for p in preds))
        runs.append({"seed": seed, "best_epoch": ckpt.best_epoch, "test": test})
        logger.info("seed %d: best epoch %d, test %s", seed, ckpt.best_epoch, test)
    tested = [r["test"] for r in runs if r["test"]]
    summary = {
        "kind": model0.kind,
        "n": cfg.n,
        "seeds": cfg.seeds,
        "split": {
            "train_end": split.train_end.isoformat(), "val_end": split.val_end.isoformat(),
            "train": len(split.train), "validation": len(split.validation), "test": len(split.test),
            "dropped": split.dropped,
        },
        "runs": runs,
        "mean": {k: _mean([t[k] for t in tested]) for k in ("accuracy", "ppv", "npv")},
    }
    _dump_json(summary, out / "summary.json")
    m = summary["mean"]
    print(f"trained {len(cfg.seeds)} seed(s): mean ppv={m['ppv']} npv={m['npv']} accuracy={m['accuracy']}")


def cmd_evaluate(args, cfg):
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.config.n != cfg.n:
        raise ConfigError(f"checkpoint was trained at n={ckpt.config.n}, config says n={cfg.n}")
    groups = _load_bars(args, cfg)
    split = make_split(_samples(groups, cfg), cfg)
    samples = getattr(split, args.split)
    if not samples:
        raise ConfigError(f"{args.split} split is empty")
    out = _out_dir(args, cfg)
    result = {"checkpoint": ckpt_path.name, "split": args.split, "samples": len(samples),
              **_metrics(evaluate(build_model(ckpt), encode(samples, ckpt.config)))}
    _dump_json(result, out / f"metrics_{args.split}.json")
    print(f"{args.split}: accuracy={result['accuracy']} ppv={result['ppv']} npv={result['npv']}")


def _read_index(path: Path, start: dt.date, end: dt.date):
    if not path.is_file():
        raise FileNotFoundError(f"index file not found: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if lineno == 1 or not line.strip():
            continue
        d, c = line.split(",")[:2]
        day = dt.date.fromisoformat(d.strip())
        if start <= day <= end:
            rows.append(float(c))
    return rows


def cmd_backtest(args, cfg):
    if not args.signals and not args.checkpoint:
        raise UsageError("backtest needs --signals or --checkpoint")
    groups = _load_bars(args, cfg)
    runs = []
    for path in args.signals or []:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"signals not found: {p}")
        runs.append((p.stem, parse_signals(p.read_text())))
    if args.checkpoint:
        split = make_split(_samples(groups, cfg), cfg)
        for path in args.checkpoint:
            p = Path(path)
            if not p.is_file():
                raise FileNotFoundError(f"checkpoint not found: {p}")
            preds = predict(load_checkpoint(p), split.test)
            runs.append((p.stem, [Signal(x.date, x.symbol, x.p_up, x.r_hat) for x in preds]))
    out = _out_dir(args, cfg)
    results = []
    for name, signals in runs:
        # the simulation starts on the first signal day
        first = min((s.date for s in signals), default=None)
        prices = {sym: [b for b in bars if first is None or b.date >= first] for sym, bars in groups.items()}
        report = run_backtest(signals, prices, cfg.backtest)
        (out / f"report_{name}.json").write_text(report.to_json())
        (out / f"equity_{name}.csv").write_text(report.equity_csv())
        results.append({"run": name, **report.summary()})
        print(f"{name}: pf={report.pf:.6f} mdd={report.mdd:.6f} trades={len(report.trades)}")
    summary = {"runs": results, "mean_pf": _mean([r["pf"] for r in results]),
               "mean_mdd": _mean([r["mdd"] for r in results])}
    if args.index:
        starts = [r["start"] for r in results if r["start"]]
        if starts:
            closes = _read_index(Path(args.index), dt.date.fromisoformat(min(starts)),
                                 dt.date.fromisoformat(max(r["end"] for r in results if r["end"])))
            if closes:
                summary["idc"], summary["imd"] = index_metrics(closes)
    _dump_json(summary, out / "summary.json")


def cmd_gradcheck(args, cfg):
    reports = run_all(cfg.seed)
    for rep in reports:
        for line in rep.lines():
            print(line)
    if args.out:
        out = _out_dir(args, cfg)
        _dump_json([{"passed": r.passed, "max_error": r.max_error, "errors": r.errors} for r in reports],
                   out / "gradcheck.json")
    failed = [r for r in reports if not r.passed]
    print(f"gradcheck: {len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT_FAILURE if failed else EXIT_OK


HANDLERS = {
    "ingest": cmd_ingest, "synth": cmd_synth, "render": cmd_render, "decompose": cmd_decompose,
    "train": cmd_train, "evaluate": cmd_evaluate, "backtest": cmd_backtest, "gradcheck": cmd_gradcheck,
}


# --- argument parsing -----------------------------------------------------

def _date_arg(value: str) -> dt.date:
    try:
        return dt.date.fromisoformat(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help="output directory (paths.out)")
    common.add_argument("--data", help="bars CSV or a directory holding bars.csv (paths.data)")
    common.add_argument("--n", type=int, help="window length in days (window.n)")
    common.add_argument("--horizon", type=int, help="label horizon in days (window.horizon)")
    common.add_argument("--seed", type=int, help="single seed; replaces the seed list")
    common.add_argument("--lambda", dest="lambda_", type=float, help="regression loss weight (model.lambda)")
    common.add_argument("--threshold", type=float, help="entry probability threshold (backtest.threshold)")
    common.add_argument("--cost", type=float, help="round-trip cost (backtest.cost)")
    common.add_argument("--max-positions", type=int, help="portfolio slots (backtest.max_positions)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="smsfr", description="Multi-scale chart CNN pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.add_parser("ingest", parents=[common], help="validate bar data and write a normalised copy")
    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic universe")
    p.add_argument("--days", type=int, help="trading days per symbol (synth.days)")
    p.add_argument("--symbols", type=int, help="number of symbols (synth.symbols)")
    p.add_argument("--planted", choices=["momentum", "reversal"], help="planted rule (synth.planted)")
    for name, text in (("render", "write the chart image of one window"), ("decompose", "dump the sub-maps of one window")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--symbol")
        p.add_argument("--end", type=_date_arg, help="last day of the window (default: last bar)")
        if name == "render":
            p.add_argument("--format", choices=IMAGE_FORMATS, default="pgm")
            p.add_argument("--submaps", action="store_true", help="render every sub-map instead of the daily chart")
    sub.add_parser("train", parents=[common], help="train one model per seed")
    p = sub.add_parser("evaluate", parents=[common], help="PPV/NPV of a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p = sub.add_parser("backtest", parents=[common], help="simulate trading from signals or checkpoints")
    p.add_argument("--signals", nargs="+", help="signal CSVs (date,symbol,p_up[,r_hat])")
    p.add_argument("--checkpoint", nargs="+", help="checkpoints scored on the test split")
    p.add_argument("--index", help="index CSV (date,close) for IDC/IMD")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference verification suite")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
        print(f"smsfr: unknown command {argv[0]!r} (choose from {', '.join(COMMANDS)})", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    overrides = {
        "n": args.n, "horizon": args.horizon, "seed": args.seed, "lambda": args.lambda_,
        "threshold": args.threshold, "cost": args.cost, "max_positions": args.max_positions,
        "days": getattr(args, "days", None), "symbols": getattr(args, "symbols", None),
        "planted": getattr(args, "planted", None),
    }
    try:
        cfg = runconfig.RunConfig(runconfig.load_tree(args.config, overrides))
        status = HANDLERS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"smsfr: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"smsfr: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except UsageError as exc:
        print(f"smsfr: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SmsfrError, ValueError, OSError) as exc:
        print(f"smsfr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return status or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
