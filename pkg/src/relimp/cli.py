"""Command-line entry point: ``relimp <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .experiments import (DEFAULT_GRID, SWEEP_COLUMNS, TABLE_I, ablation_by_name, baseline_rows,
                          evaluate_scenes, model_predictions, read_csv_rows, render_table, rows_to_csv,
                          run_ablation, summarize, sweep_thresholds)
from .metrics import METRICS_COLUMNS, icc, ratings_matrix
from .scene import Dataset, load_dataset, save_dataset
from .synth import generate_dataset
from .train import train

log = logging.getLogger("relimp")


class CLIError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    if getattr(args, "mode", None):
        cfg.train = dataclasses.replace(cfg.train, mode=args.mode)
    return cfg


def _dataset(path) -> Dataset:
    if not path:
        raise CLIError("--data is required")
    ds = load_dataset(path)
    if not ds.labeled:
        raise CLIError(f"{path}: dataset has no labeled scenes")
    return ds


def _write(path, text: str) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_generate(args) -> None:
    cfg = _config(args)
    gen = cfg.generator if args.seed is None else dataclasses.replace(cfg.generator, seed=args.seed)
    if not args.out:
        raise CLIError("--out is required")
    save_dataset(generate_dataset(gen), args.out)
    log.info("wrote %d labeled + %d unlabeled scenes to %s", gen.scene_count, gen.unlabeled_count, args.out)


def _checkpoint_paths(ckpt: str) -> tuple[Path, Path]:
    p = Path(ckpt)
    return p.with_name(p.name + ".config.json"), p.with_name(p.name + ".log.csv")


def cmd_train(args) -> None:
    cfg = _config(args)
    ds = _dataset(args.data)
    if not args.out:
        raise CLIError("--out is required (checkpoint path)")
    tr, _ = cfg.split(ds.labeled, cfg.train.seed)
    res = train(tr, cfg.model, cfg.train, unlabeled=ds.unlabeled)
    save_checkpoint(res.params, args.out)
    side, log_path = _checkpoint_paths(args.out)
    side.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    log_path.write_text(res.log_csv())
    log.info("best epoch %d; checkpoint %s, log %s", res.best_epoch, args.out, log_path)


def cmd_eval(args) -> None:
    if not args.checkpoint:
        raise CLIError("--checkpoint is required")
    side, _ = _checkpoint_paths(args.checkpoint)
    if args.config:
        cfg = load_config(args.config)
    elif side.exists():
        cfg = RunConfig.from_dict(json.loads(side.read_text()))
    else:
        raise CLIError(f"no --config given and no sidecar {side}")
    params = load_checkpoint(args.checkpoint)
    ds = _dataset(args.data)
    _, te = cfg.split(ds.labeled)
    seed = cfg.train.seed if args.seed is None else args.seed
    rows = evaluate_scenes(model_predictions(params, cfg.model, te), te, "model", seed)
    if args.baselines:
        rows += baseline_rows(te, seed=seed)
    _write(args.out, rows_to_csv(rows, METRICS_COLUMNS))


def cmd_ablate(args) -> None:
    cfg = _config(args)
    ds = _dataset(args.data)
    configs = [ablation_by_name(n) for n in args.configs.split(",")] if args.configs else list(TABLE_I)
    seeds = args.seeds or [cfg.train.seed]
    if any(c.mode == "semi_supervised" for c in configs) and not ds.unlabeled:
        raise CLIError("semi-supervised configs need unlabeled scenes in --data")
    full_tr, te = dataclasses.replace(cfg, label_fraction=1.0).split(ds.labeled)
    rows = run_ablation(full_tr, te, configs, seeds, cfg.model, cfg.train, unlabeled=ds.unlabeled,
                        subset=lambda s: cfg.split(ds.labeled, s)[0])
    _write(args.out, rows_to_csv(rows, METRICS_COLUMNS))
    if args.out:
        summary = summarize(rows)
        Path(args.out).with_suffix(".summary.csv").write_text(rows_to_csv(summary))


def cmd_sweep(args) -> None:
    cfg = _config(args)
    ds = _dataset(args.data)
    if not ds.unlabeled:
        raise CLIError("the threshold sweep trains semi-supervised and needs unlabeled scenes")
    _, te = cfg.split(ds.labeled)
    rows = sweep_thresholds([], te, ds.unlabeled, args.grid_a1, args.grid_a2, args.seeds or [cfg.train.seed],
                            cfg.model, cfg.train, subset=lambda s: cfg.split(ds.labeled, s)[0])
    _write(args.out, rows_to_csv(rows, SWEEP_COLUMNS))


def cmd_report(args) -> None:
    out = []
    for path in args.tables:
        out.append(f"== {path}\n")
        out.append(render_table(read_csv_rows(path)))
    _write(args.out, "".join(out))


def cmd_icc(args) -> None:
    path = args.data or args.ratings
    if not path:
        raise CLIError("icc needs a ratings CSV (--data or positional)")
    rows = read_csv_rows(path)
    if set(rows[0]) != {"subject", "rater", "value"}:
        raise CLIError(f"{path}: expected header subject,rater,value")
    try:
        triples = [(r["subject"], r["rater"], float(r["value"])) for r in rows]
    except ValueError as exc:
        raise CLIError(f"{path}: non-numeric rating ({exc})") from None
    value = icc(ratings_matrix(triples), args.form)
    _write(args.out, f"{value:.6f}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="relimp", description="Important-object identification toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True, seed=True):
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--out", help="output path (stdout when omitted, where sensible)")
        if data:
            p.add_argument("--data", help="JSONL dataset")
        if seed:
            p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("generate", help="write a synthetic JSONL dataset"), data=False)
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("train", help="train and write checkpoint, config sidecar and log CSV"))
    p.add_argument("--mode", choices=["supervised", "ssl", "semi_supervised"])
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="metrics CSV for a checkpoint on the test split"))
    p.add_argument("--checkpoint")
    p.add_argument("--baselines", action="store_true", help="add rows for B-1, B-2, B-3")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("ablate", help="train the ablation matrix"))
    p.add_argument("--seeds", type=_ints, help="comma-separated seeds (default: --seed or config seed)")
    p.add_argument("--configs", help=f"comma-separated subset of {','.join(c.name for c in TABLE_I)}")
    p.set_defaults(func=cmd_ablate)

    p = common(sub.add_parser("sweep", help="alpha1 x alpha2 threshold sweep"))
    p.add_argument("--grid-a1", type=_floats, default=list(DEFAULT_GRID))
    p.add_argument("--grid-a2", type=_floats, default=list(DEFAULT_GRID))
    p.add_argument("--seeds", type=_ints)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render metrics or sweep CSVs as text tables")
    p.add_argument("tables", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("icc", help="ICC of a subject,rater,value ratings CSV")
    p.add_argument("ratings", nargs="?")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--form", default="ICC(2,1)", choices=["ICC(2,1)", "ICC(3,1)"])
    p.set_defaults(func=cmd_icc)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CLIError as exc:
        print(f"relimp {args.command}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"relimp {args.command}: cannot read {exc.filename}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as exc:
        print(f"relimp {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
