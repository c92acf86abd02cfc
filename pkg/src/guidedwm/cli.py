"""Command-line interface: ``guidedwm <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DimensionError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--variant", default="thinkjepa")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="output path or directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="guidedwm", description="Guided latent world model on a synthetic world")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("gen-data", "generate the synthetic dataset"),
                        ("gen-cache", "generate the synthetic guidance cache"),
                        ("train", "train one variant"),
                        ("eval", "evaluate a checkpoint"),
                        ("rollout", "dump rollout trajectories for plotting"),
                        ("grid", "train and evaluate a grid of variants and seeds"),
                        ("gradcheck", "run the gradient-check suite")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name in ("eval", "rollout"):
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--split", default="val")
        if name == "grid":
            p.add_argument("--variants", default="thinkjepa,predictor_only,vlm_only",
                           help="comma-separated variant names (empty for none)")
            p.add_argument("--seeds", default="42", help="comma-separated seeds")
        if name == "gradcheck":
            p.add_argument("--seeds", type=int, default=20, help="random seeds per primitive")
    p = sub.add_parser("inspect-cache", help="print a cache file's header and section statistics")
    p.add_argument("path", help="cache file or shard directory")
    return ap


def _resolve(args):
    from .config import load_config, resolve_variant
    cfg = load_config(args.config, args.overrides)
    cfg = resolve_variant(cfg, args.variant)
    if args.seed is not None:
        cfg.optim.seed = args.seed
    return cfg


def cmd_gen_data(args) -> int:
    from .pipeline import generate_data
    cfg = _resolve(args)
    if args.out:
        cfg.paths.data = args.out
    print(generate_data(cfg))
    return EXIT_OK


def cmd_gen_cache(args) -> int:
    from .pipeline import generate_cache
    cfg = _resolve(args)
    if args.out:
        cfg.paths.cache = args.out
    paths = generate_cache(cfg)
    print(f"wrote {len(paths)} shards to {cfg.paths.cache}")
    return EXIT_OK


def cmd_inspect_cache(args) -> int:
    from .cache import inspect_cache
    path = Path(args.path)
    files = sorted(path.glob("shard_*.tjpc")) if path.is_dir() else [path]
    if not files:
        raise DataError(f"no cache files under {path}")
    for f in files:
        print(inspect_cache(f))
    return EXIT_OK


def cmd_train(args) -> int:
    from .report import meta_record, write_jsonl
    from .training import load_resources, train
    cfg = _resolve(args)
    out = Path(args.out or Path(cfg.paths.out) / f"{args.variant}_seed{cfg.optim.seed}")
    if args.variant == "prompt_only":
        raise ConfigError("prompt_only has nothing to train; use eval or grid")
    res = load_resources(cfg)
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg, res, out / "checkpoint.tjck")
    write_jsonl(out / "train_log.jsonl",
                [meta_record(cfg.to_dict(), args.variant, cfg.optim.seed, res.dataset_hash, res.cache_hash,
                             best_step=result.best_step)] + [dict(r, type="log") for r in result.history])
    print(f"checkpoint: {out / 'checkpoint.tjck'} (best step {result.best_step}, val ADE {result.best_val_ade:.4f})")
    return EXIT_OK


def _load_for_eval(args):
    from .checkpoint import load_checkpoint
    from .config import apply_overrides, config_from_dict
    from .training import load_resources, restore_model
    _, saved, _ = load_checkpoint(args.checkpoint)
    cfg = config_from_dict(saved)
    if args.config or args.overrides:
        requested = _resolve(args)
        requested.paths = cfg.paths
        apply_overrides(requested, [o for o in args.overrides if o.startswith("paths.")])
        cfg = requested
    else:
        apply_overrides(cfg, [o for o in args.overrides if o.startswith("paths.")])
    cfg.validate()
    model, extra = restore_model(cfg, args.checkpoint)
    return cfg, model, load_resources(cfg)


def cmd_eval(args) -> int:
    from .report import meta_record, metric_records, write_jsonl
    from .training import evaluate
    cfg, model, res = _load_for_eval(args)
    report = evaluate(model, res, args.split)
    records = [meta_record(cfg.to_dict(), args.variant, cfg.optim.seed, res.dataset_hash, res.cache_hash)]
    records += metric_records(report, args.split, args.variant, cfg.optim.seed)
    if args.out:
        write_jsonl(args.out, records)
    for r in records[1:]:
        h = "" if r["horizon"] is None else f"@{r['horizon']}"
        print(f"{r['metric']}{h}: {r['value']:.6f}")
    return EXIT_OK


def cmd_rollout(args) -> int:
    from .training import evaluate
    cfg, model, res = _load_for_eval(args)
    _, outputs = evaluate(model, res, args.split, return_outputs=True)
    out = Path(args.out or "rollout.json")
    payload = {"clip_ids": outputs["clip_ids"].tolist(),
               "pred": np.round(outputs["pred_traj"], 6).tolist(),
               "gt": np.round(outputs["gt_traj"], 6).tolist(),
               "frame_start": cfg.sampling.t_past + 1, "stride": cfg.sampling.stride}
    out.write_text(json.dumps(payload))
    print(f"wrote {len(payload['clip_ids'])} rollouts to {out}")
    return EXIT_OK


def cmd_grid(args) -> int:
    from .config import load_config
    from .harness import run_grid
    cfg = load_config(args.config, args.overrides)
    variants = [v for v in args.variants.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    out = Path(args.out or Path(cfg.paths.out) / "grid")
    out.mkdir(parents=True, exist_ok=True)
    records, table = run_grid(cfg, variants, seeds, out)
    print(table)
    failures = [r for r in records if r.get("type") == "failure"]
    if failures:
        print(f"{len(failures)} run(s) failed; see {out / 'grid.jsonl'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import run_suite
    reports = run_suite(seeds=range(args.seeds))
    for name, rep in reports.items():
        print(f"{name:<36} {rep}")
    return EXIT_OK if all(r.passed for r in reports.values()) else EXIT_NUMERIC


COMMANDS = {"gen-data": cmd_gen_data, "gen-cache": cmd_gen_cache, "inspect-cache": cmd_inspect_cache,
            "train": cmd_train, "eval": cmd_eval, "rollout": cmd_rollout, "grid": cmd_grid,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
