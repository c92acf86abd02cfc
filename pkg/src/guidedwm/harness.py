"""Variant runs and the experiment grid."""
from __future__ import annotations

import copy
import logging
from pathlib import Path

import numpy as np

from .config import RunConfig, resolve_variant
from .dataset import Dataset, load_dataset
from .errors import GuidedWMError
from .metrics import accuracy, ade, fde
from .report import comparison_table, meta_record, metric_records, write_jsonl
from .training import evaluate, load_resources, train
from .waypoints import evaluate_fixtures

log = logging.getLogger(__name__)


def run_prompt_only(cfg: RunConfig, data: Dataset, split: str, seed: int) -> list[dict]:
    """Parse text fixtures, interpolate, and score against the first future window."""
    s = cfg.sampling
    ids = data.split(split)
    trajs, counts = evaluate_fixtures(data.root, ids, s.t_future)
    recs = [{"type": "parse", "split": split, "variant": "prompt_only", "seed": seed,
             "counts": dict(sorted(counts.items())), "n_samples": len(ids)}]
    if trajs:
        cids = sorted(trajs)
        pred = np.stack([np.broadcast_to(trajs[c][:, None, :], (s.t_future, cfg.world.n_joints, 3)) for c in cids])
        gt = np.stack([data.clips[c].trajectory[s.t_past:s.t_past + s.t_future] for c in cids])
        for name, value in (("ade", ade(pred, gt)), ("fde", fde(pred, gt)), ("accuracy", accuracy(pred, gt))):
            recs.append({"type": "metric", "split": split, "variant": "prompt_only", "metric": name,
                         "horizon": None, "value": value, "n_samples": len(cids), "seed": seed})
    recs.append({"type": "metric", "split": split, "variant": "prompt_only", "metric": "parse_success",
                 "horizon": None, "value": len(trajs) / len(ids), "n_samples": len(ids), "seed": seed})
    return recs


def run_variant(base: RunConfig, variant: str, seed: int, data: Dataset | None = None,
                split: str = "val", out_dir: Path | None = None) -> list[dict]:
    cfg = resolve_variant(base, variant)
    cfg.optim.seed = seed
    data = data or load_dataset(cfg.paths.data)
    if variant == "prompt_only":
        meta = meta_record(cfg.to_dict(), variant, seed, data.content_hash, "")
        return [meta] + run_prompt_only(cfg, data, split, seed)
    res = load_resources(cfg, data)
    ckpt = Path(out_dir) / f"{variant}_seed{seed}.tjck" if out_dir else None
    result = train(cfg, res, ckpt)
    report = evaluate(result.model, res, split)
    meta = meta_record(cfg.to_dict(), variant, seed, res.dataset_hash, res.cache_hash,
                       best_step=result.best_step, initial_loss=result.initial_loss, final_loss=result.final_loss)
    return [meta] + metric_records(report, split, variant, seed)


def run_grid(base: RunConfig, variants, seeds, out_dir=None, split: str = "val") -> tuple[list[dict], str]:
    """Every (variant, seed) pair; failures are recorded and the grid moves on."""
    records: list[dict] = []
    variants, seeds = list(variants), list(seeds)
    data = load_dataset(base.paths.data) if variants else None
    for variant in variants:
        for seed in seeds:
            try:
                records += run_variant(copy.deepcopy(base), variant, seed, data, split, out_dir)
            except GuidedWMError as exc:
                log.warning("grid run %s seed %d failed: %s", variant, seed, exc)
                records.append({"type": "failure", "variant": variant, "seed": seed,
                                "error": f"{type(exc).__name__}: {exc}"})
    table = comparison_table(records)
    if out_dir is not None:
        write_jsonl(Path(out_dir) / "grid.jsonl", records)
        (Path(out_dir) / "table.txt").write_text(table + "\n")
    return records, table
