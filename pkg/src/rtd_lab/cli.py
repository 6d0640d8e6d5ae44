"""``rtd-lab`` command line.

Exit status: 0 success, 1 usage error (bad flags, unknown variant, missing
files), 2 runtime failure. Logs go to stderr; results go to files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
from pathlib import Path

from .config import VARIANTS, ConfigError, RunConfig, all_keys, load_config, set_value
from .container import ContainerError
from .data import DataError, RecordStore, build_store
from .trainer import Trainer, TrainingAborted, format_throughput, measure_throughput

log = logging.getLogger("rtd_lab")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _keys_epilog() -> str:
    keys = "\n".join(f"  {k}" for k in all_keys())
    return f"config keys (file lines 'key = value', or --set key=value):\n{keys}"


def _build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    p = _Parser(prog="rtd-lab", description="Replaced-token-detection pre-training lab.", epilog=_keys_epilog(), formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build-data", help="tokenize a corpus into a record store")
    b.add_argument("--corpus", required=True)
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--vocab-size", type=int, default=8192)
    b.add_argument("--seq-len", type=int, default=128)
    b.add_argument("--name", default=None, help="file stem (default: corpus file stem)")

    def run_flags(sp):
        sp.add_argument("--config", help="flat 'section.key = value' file")
        sp.add_argument("--data", help="path to a .records store (overrides data.store)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    t = sub.add_parser("train", help="train one variant", epilog=_keys_epilog(), formatter_class=fmt)
    t.add_argument("--variant", required=True, help="|".join(VARIANTS))
    t.add_argument("--steps", type=int)
    t.add_argument("--metrics", help="JSON-lines metrics output")
    t.add_argument("--checkpoint", help="write a checkpoint here at the end")
    t.add_argument("--resume", help="continue from this checkpoint")
    run_flags(t)

    be = sub.add_parser("bench", help="compare steps/sec across variants", epilog=_keys_epilog(), formatter_class=fmt)
    be.add_argument("--variants", default="baseline,embgen,early-exit-disc,adaptive-gen")
    be.add_argument("--steps", type=int, help="timed steps per variant (rounded to whole windows)")
    be.add_argument("--warmup-windows", type=int, default=1)
    be.add_argument("--out", help="CSV output (variant, steps_per_sec, ratio)")
    run_flags(be)

    e = sub.add_parser("export-plots", help="turn a metrics log into plot-ready CSV series")
    e.add_argument("--metrics", required=True)
    e.add_argument("--out", required=True, help="output directory")
    return p


def _load_run_config(args) -> RunConfig:
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        set_value(cfg, key.strip(), value)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.data:
        cfg.data.store = args.data
    if not cfg.data.store:
        raise UsageError("no record store given (use --data or data.store)")
    if not Path(cfg.data.store).is_file():
        raise UsageError(f"record store not found: {cfg.data.store}")
    return cfg


def cmd_build_data(args) -> int:
    if not Path(args.corpus).is_file():
        raise UsageError(f"corpus not found: {args.corpus}")
    store = build_store(args.corpus, args.out, args.vocab_size, args.seq_len, args.name)
    log.info("wrote %d records (vocab %d) to %s", len(store), store.vocab_size, store.path)
    return EXIT_OK


def cmd_train(args) -> int:
    if args.variant not in VARIANTS:
        raise UsageError(f"unknown variant {args.variant!r}; choose from {', '.join(VARIANTS)}")
    cfg = _load_run_config(args)
    cfg.train.variant = args.variant
    if args.steps is not None:
        cfg.train.steps = args.steps
    store = RecordStore.open(cfg.data.store)
    metrics = args.metrics or cfg.train.metrics_path or None
    if args.resume:
        if not Path(args.resume).is_file():
            raise UsageError(f"checkpoint not found: {args.resume}")
        trainer = Trainer.load(args.resume, store, cfg, metrics_path=metrics)
    else:
        if metrics and Path(metrics).exists():
            Path(metrics).unlink()
        trainer = Trainer(cfg, store, metrics_path=metrics)
    trainer.run()
    ckpt = args.checkpoint or cfg.train.checkpoint_path
    if ckpt:
        trainer.save(ckpt)
        log.info("checkpoint written to %s", ckpt)
    return EXIT_OK


def cmd_bench(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variant(s) {', '.join(unknown)}; choose from {', '.join(VARIANTS)}")
    cfg = _load_run_config(args)
    store = RecordStore.open(cfg.data.store)
    windows = 5
    if args.steps:
        windows = max(1, -(-args.steps // cfg.ctrl.window))
    rows = measure_throughput(variants, cfg, store, windows=windows, warmup_windows=args.warmup_windows)
    missing = [v for v in variants if v not in {r.variant for r in rows}]
    for v in missing:
        log.warning("variant %s omitted: it failed to run", v)
    print(format_throughput(rows))
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["variant", "steps_per_sec", "ratio"])
            for r in rows:
                w.writerow([r.variant, f"{r.steps_per_sec:.4f}", f"{r.ratio:.4f}"])
    return EXIT_OK


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def export_plots(records: list[dict], out_dir) -> dict[str, Path]:
    """Write per-exit RTD accuracy, P-vector and steps/sec CSVs; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    def series(name, field):
        width = max((len(r.get(field) or []) for r in records), default=0)
        path = out / f"{name}.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "variant"] + [f"{field}_{i + 1}" for i in range(width)])
            for r in records:
                vals = list(r.get(field) or [])
                vals += [None] * (width - len(vals))
                w.writerow([r["step"], r["variant"]] + ["" if v is None else v for v in vals])
        paths[name] = path

    series("rtd_acc_per_exit", "rtd_acc_per_exit")
    series("mlm_acc_per_exit", "mlm_acc_per_exit")
    series("rtd_acc_per_section", "rtd_acc_per_section")
    series("p_vector", "p_vector")

    by_variant: dict[str, list[float]] = {}
    for r in records:
        by_variant.setdefault(r["variant"], []).append(r["steps_per_sec"])
    med = {v: statistics.median(s) for v, s in by_variant.items()}
    ref = med.get("baseline", next(iter(med.values()), 1.0))
    path = out / "steps_per_sec.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "steps_per_sec", "ratio"])
        for v, s in med.items():
            w.writerow([v, f"{s:.4f}", f"{s / ref:.4f}"])
    paths["steps_per_sec"] = path
    return paths


def cmd_export_plots(args) -> int:
    if not Path(args.metrics).is_file():
        raise UsageError(f"metrics file not found: {args.metrics}")
    records = read_metrics(args.metrics)
    for name, path in export_plots(records, args.out).items():
        log.info("wrote %s", path)
    return EXIT_OK


COMMANDS = {
    "build-data": cmd_build_data,
    "train": cmd_train,
    "bench": cmd_bench,
    "export-plots": cmd_export_plots,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"rtd-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ContainerError, TrainingAborted, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"rtd-lab: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
