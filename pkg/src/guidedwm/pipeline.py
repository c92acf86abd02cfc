"""On-disk artifact generation shared by the CLI and the tests."""
from __future__ import annotations

import logging
from functools import partial
from pathlib import Path

from .cache import write_sharded
from .config import RunConfig
from .dataset import generate_dataset, load_dataset, read_manifest
from .guidance import generate_synthetic_bundle
from .waypoints import write_fixture
from .world import WorldConfig, read_clip

log = logging.getLogger(__name__)


def generate_data(cfg: RunConfig) -> Path:
    cfg.validate()
    writer = partial(write_fixture, t_past=cfg.sampling.t_past, t_future=cfg.sampling.t_future)
    return generate_dataset(Path(cfg.paths.data), cfg.world, cfg.teacher, cfg.dataset, fixture_writer=writer)


def generate_cache(cfg: RunConfig) -> list[Path]:
    """Synthetic thinker bundles for every clip in the dataset, sharded."""
    cfg.validate()
    root = Path(cfg.paths.data)
    manifest = read_manifest(root)
    world = WorldConfig(**manifest["world"])
    bundles = [generate_synthetic_bundle(read_clip(root / e["file"]), world, cfg.thinker, cfg.guidance.thinker_seed)
               for e in manifest["clips"]]
    paths = write_sharded(bundles, cfg.paths.cache)
    log.info("wrote %d bundles in %d shards to %s", len(bundles), len(paths), cfg.paths.cache)
    return paths


def prepare(cfg: RunConfig, force: bool = False):
    """Generate data and cache if missing; returns the loaded dataset."""
    if force or not (Path(cfg.paths.data) / "manifest.json").exists():
        generate_data(cfg)
    if force or not any(Path(cfg.paths.cache).glob("shard_*.tjpc")):
        generate_cache(cfg)
    return load_dataset(cfg.paths.data)
