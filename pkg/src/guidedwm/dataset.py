"""Dataset directory: one binary file per clip plus a JSON manifest.

Layout::

    <root>/manifest.json
    <root>/clips/clip_000000.tjcl
    <root>/prompt_fixtures/<clip_id>.txt     (text fixtures for the prompt-only baseline)
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .world import Clip, TeacherConfig, TeacherEncoder, WorldConfig, generate_clip, read_clip, write_clip

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class DatasetSpec:
    n_train: int = 512
    n_val: int = 128
    n_test: int = 128
    n_calibration: int = 256
    seed: int = 2024


@dataclass
class Dataset:
    """Clips held in memory with teacher latents computed once at load."""
    root: Path
    world: WorldConfig
    encoder: TeacherEncoder
    clips: dict[int, Clip]
    splits: dict[str, list[int]]
    latents: dict[int, np.ndarray] = field(default_factory=dict)
    content_hash: str = ""

    def split(self, name: str) -> list[int]:
        if not self.splits.get(name):
            raise DataError(f"dataset has no split {name!r}")
        return self.splits[name]

    @property
    def n_patches(self) -> int:
        return self.encoder.n_patches

    @property
    def d_latent(self) -> int:
        return self.encoder.cfg.d_latent


def clip_seed(base: int, clip_id: int) -> int:
    return int(np.random.default_rng([base, clip_id]).integers(2**62))


def generate_dataset(root: Path, world: WorldConfig, teacher: TeacherConfig,
                     spec: DatasetSpec, fixture_writer=None) -> Path:
    """Generate clips, calibrate the teacher on separate clips, and write the manifest."""
    world.validate()
    root = Path(root)
    (root / "clips").mkdir(parents=True, exist_ok=True)
    counts = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}
    entries, clip_id = [], 0
    for split in SPLITS:
        for _ in range(counts[split]):
            clip = generate_clip(world, clip_seed(spec.seed, clip_id), clip_id)
            name = f"clips/clip_{clip_id:06d}.tjcl"
            write_clip(clip, root / name)
            entries.append({"id": clip_id, "split": split, "file": name})
            if fixture_writer is not None and split != "train":
                fixture_writer(root, clip)
            clip_id += 1
    encoder = TeacherEncoder(teacher, world.channels, world.grid)
    # calibration clips use ids past the dataset range so they never overlap a split
    calib = np.stack([generate_clip(world, clip_seed(spec.seed, 10**6 + i)).frames
                      for i in range(spec.n_calibration)])
    encoder.calibrate(calib)
    manifest = {
        "version": MANIFEST_VERSION,
        "world": asdict(world),
        "teacher": asdict(teacher),
        "spec": asdict(spec),
        "calibration": {"mean": encoder.calib_mean.tolist(), "std": encoder.calib_std.tolist()},
        "clips": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    log.info("wrote %d clips to %s", len(entries), root)
    return root


def read_manifest(root: Path) -> dict:
    path = Path(root) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"no dataset manifest at {path}") from None
    except (OSError, ValueError) as exc:
        raise DataError(f"unreadable manifest {path}: {exc}") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {manifest.get('version')}")
    return manifest


def content_hash(root: Path) -> str:
    """SHA-256 over the manifest and every clip file, in manifest order."""
    root = Path(root)
    h = hashlib.sha256((root / "manifest.json").read_bytes())
    for entry in read_manifest(root)["clips"]:
        h.update((root / entry["file"]).read_bytes())
    return h.hexdigest()


def load_dataset(root: Path, splits=SPLITS) -> Dataset:
    root = Path(root)
    manifest = read_manifest(root)
    world = WorldConfig(**manifest["world"])
    encoder = TeacherEncoder(TeacherConfig(**manifest["teacher"]), world.channels, world.grid)
    encoder.calib_mean = np.asarray(manifest["calibration"]["mean"])
    encoder.calib_std = np.asarray(manifest["calibration"]["std"])
    clips: dict[int, Clip] = {}
    split_ids: dict[str, list[int]] = {s: [] for s in SPLITS}
    for entry in manifest["clips"]:
        if entry["split"] not in splits:
            continue
        clip = read_clip(root / entry["file"])
        if clip.frames.shape[0] != world.n_frames:
            raise DataError(f"clip {entry['id']} has {clip.frames.shape[0]} frames, manifest says {world.n_frames}")
        clips[entry["id"]] = clip
        split_ids[entry["split"]].append(entry["id"])
    ids = sorted(clips)
    latents = {}
    if ids:
        stacked = encoder.encode(np.stack([clips[i].frames for i in ids]))
        latents = {i: stacked[k] for k, i in enumerate(ids)}
    return Dataset(root, world, encoder, clips, split_ids, latents, content_hash(root))
