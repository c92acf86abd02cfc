"""JSON-lines run reports and the variant comparison table."""
from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable

import numpy as np

from .metrics import MetricReport

FD_CONVENTION = "mean over tokens of the per-token Euclidean norm"


def meta_record(cfg_dict: dict, variant: str, seed: int, dataset_hash: str, cache_hash: str, **extra) -> dict:
    rec = {"type": "meta", "variant": variant, "seed": seed, "config": cfg_dict,
           "dataset_hash": dataset_hash, "cache_hash": cache_hash, "fd_convention": FD_CONVENTION}
    rec.update(extra)
    return rec


def metric_records(report: MetricReport, split: str, variant: str, seed: int) -> list[dict]:
    return [{"type": "metric", "split": split, "variant": variant, "metric": m, "horizon": h,
             "value": float(v), "n_samples": report.n_samples, "seed": seed}
            for m, h, v in report.records()]


def write_jsonl(path, records: Iterable[dict], append: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a" if append else "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def comparison_table(records: Iterable[dict], metrics=("sl1", "fd", "cd", "ade", "fde", "accuracy"),
                     horizons=(4, 8, 16, 32)) -> str:
    """Median over seeds per variant; one row per variant in first-seen order."""
    values: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    order: list[str] = []
    for r in records:
        if r.get("type") != "metric":
            continue
        if r["variant"] not in order:
            order.append(r["variant"])
        key = r["metric"] if r["horizon"] is None else f"{r['metric']}@{r['horizon']}"
        values[r["variant"]][key].append(r["value"])
    cols = list(metrics) + [f"ade_at@{h}" for h in horizons]
    head = f"{'variant':<16}" + "".join(f"{c:>12}" for c in cols)
    lines = [head, "-" * len(head)]
    for v in order:
        cells = []
        for c in cols:
            xs = values[v].get(c)
            cells.append(f"{np.median(xs):>12.4f}" if xs else f"{'-':>12}")
        lines.append(f"{v:<16}" + "".join(cells))
    return "\n".join(lines)
