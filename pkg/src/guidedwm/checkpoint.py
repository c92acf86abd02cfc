"""Checkpoint files: named f32 parameter arrays plus the resolved run config."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .binio import FormatError, decode_sections, encode_sections
from .errors import ConfigError

MAGIC = b"TJCK"
VERSION = 1
_PREFIX = "param/"
IGNORED_SECTIONS = ("paths",)


def save_checkpoint(path, state: dict[str, np.ndarray], config: dict, extra: dict | None = None) -> None:
    sections: dict = {"config": json.dumps(config, sort_keys=True), "extra": extra or {}}
    for name, arr in state.items():
        sections[_PREFIX + name] = np.asarray(arr, dtype=np.float32)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_sections(MAGIC, VERSION, sections))
    os.replace(tmp, path)


def load_checkpoint(path, expected_config: dict | None = None) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Returns (state, config, extra); raises ConfigError if ``expected_config`` differs."""
    s = decode_sections(Path(path).read_bytes(), MAGIC, VERSION)
    try:
        config = json.loads(s.pop("config"))
        extra = json.loads(s.pop("extra"))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"checkpoint {path} lacks a readable config: {exc}") from None
    if expected_config is not None:
        # output locations may differ between the training and evaluating run
        want = {k: v for k, v in json.loads(json.dumps(expected_config)).items() if k not in IGNORED_SECTIONS}
        have = {k: v for k, v in config.items() if k not in IGNORED_SECTIONS}
        if have != want:
            raise ConfigError(f"checkpoint config does not match the requested run: {_diff_keys(have, want)[:8]}")
    state = {k[len(_PREFIX):]: v for k, v in s.items() if k.startswith(_PREFIX)}
    return state, config, extra


def _diff_keys(a: dict, b: dict) -> list[str]:
    out = []
    for sec in sorted(set(a) | set(b)):
        sa, sb = a.get(sec, {}), b.get(sec, {})
        out += [f"{sec}.{k}" for k in sorted(set(sa) | set(sb)) if sa.get(k) != sb.get(k)]
    return out
