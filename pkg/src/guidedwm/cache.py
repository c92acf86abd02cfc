"""Binary guidance cache ("TJPC") codec and inspector.

Layout (little-endian)::

    "TJPC" u32 version=1
    u32 n_clips, u32 D_c, u32 L_enc, u32 L_ar, u32 n_layers, n_layers x u32 layer id, u32 L_tok
    per clip: u64 clip_id, u32 prompt length + UTF-8 prompt,
              f32 encoder tokens, f32 AR tokens, f32 layer states (layer order)
    u32 CRC-32 of every preceding byte
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .binio import FormatError, Reader, Writer
from .errors import DimensionError
from .guidance import GuidanceBundle

MAGIC = b"TJPC"
VERSION = 1
SHARD_SIZE = 8
# refuse headers that would make a reader allocate absurd buffers
_MAX_EXTENT = 1 << 20


def _check_consistent(bundles: Sequence[GuidanceBundle]) -> tuple[int, int, int, tuple[int, ...], int]:
    if not bundles:
        raise DimensionError("cannot write an empty cache")
    first = bundles[0]
    layers = first.layer_ids
    if list(layers) != sorted(set(layers)):
        raise DimensionError(f"layer ids must be strictly increasing, got {layers}")
    l_tok = first.layer_states[layers[0]].shape[0] if layers else 0
    d_c, l_enc, l_ar = first.d_c, first.encoder_tokens.shape[0], first.ar_tokens.shape[0]
    for b in bundles:
        if b.encoder_tokens.shape != (l_enc, d_c) or b.ar_tokens.shape != (l_ar, d_c):
            raise DimensionError(f"clip {b.clip_id}: token shapes differ from the first bundle")
        if b.layer_ids != layers:
            raise DimensionError(f"clip {b.clip_id}: layer set {b.layer_ids} != {layers}")
        for layer, s in b.layer_states.items():
            if s.shape != (l_tok, d_c):
                raise DimensionError(f"clip {b.clip_id} layer {layer}: shape {s.shape} != {(l_tok, d_c)}")
    return d_c, l_enc, l_ar, layers, l_tok


def encode_cache(bundles: Sequence[GuidanceBundle]) -> bytes:
    d_c, l_enc, l_ar, layers, l_tok = _check_consistent(bundles)
    w = Writer()
    w.raw(MAGIC)
    w.u32(VERSION)
    for v in (len(bundles), d_c, l_enc, l_ar, len(layers)):
        w.u32(v)
    for layer in layers:
        w.u32(layer)
    w.u32(l_tok)
    for b in bundles:
        w.u64(b.clip_id)
        w.text(b.prompt_text)
        w.f32(b.encoder_tokens)
        w.f32(b.ar_tokens)
        for layer in layers:
            w.f32(b.layer_states[layer])
    return w.finish()


def decode_cache(data: bytes) -> list[GuidanceBundle]:
    r = Reader(data)
    r.check_magic(MAGIC)
    r.check_version(VERSION)
    n_clips = r.u32("header.n_clips")
    d_c = r.u32("header.d_c")
    l_enc = r.u32("header.l_enc")
    l_ar = r.u32("header.l_ar")
    n_layers = r.u32("header.n_layers")
    if max(d_c, l_enc, l_ar, n_layers) > _MAX_EXTENT or min(d_c, l_enc, l_ar) == 0:
        raise FormatError(f"implausible header extents D_c={d_c} L_enc={l_enc} L_ar={l_ar} layers={n_layers}")
    layers = [r.u32("header.layer_ids") for _ in range(n_layers)]
    if layers != sorted(set(layers)):
        raise FormatError(f"layer ids not strictly increasing: {layers}")
    l_tok = r.u32("header.l_tok")
    if l_tok > _MAX_EXTENT or (n_layers and l_tok == 0):
        raise FormatError(f"implausible L_tok={l_tok}")
    bundles = []
    for i in range(n_clips):
        clip_id = r.u64(f"clip[{i}].clip_id")
        prompt = r.text(f"clip[{i}].prompt")
        enc = r.f32(l_enc * d_c, f"clip[{i}].encoder_tokens").reshape(l_enc, d_c)
        ar = r.f32(l_ar * d_c, f"clip[{i}].ar_tokens").reshape(l_ar, d_c)
        states = {layer: r.f32(l_tok * d_c, f"clip[{i}].layer_states[{layer}]").reshape(l_tok, d_c)
                  for layer in layers}
        bundles.append(GuidanceBundle(clip_id, enc, ar, states, prompt))
    r.finish()
    return bundles


def write_cache(bundles: Sequence[GuidanceBundle], path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_cache(bundles))
    os.replace(tmp, path)


def read_cache(path) -> list[GuidanceBundle]:
    return decode_cache(Path(path).read_bytes())


def write_sharded(bundles: Sequence[GuidanceBundle], root, shard_size: int = SHARD_SIZE) -> list[Path]:
    """Write ``shard_size`` clips per file as ``shard_00000.tjpc``..."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(0, len(bundles), shard_size):
        p = root / f"shard_{k // shard_size:05d}.tjpc"
        write_cache(bundles[k:k + shard_size], p)
        paths.append(p)
    return paths


def read_sharded(root) -> dict[int, GuidanceBundle]:
    out: dict[int, GuidanceBundle] = {}
    for p in sorted(Path(root).glob("shard_*.tjpc")):
        for b in read_cache(p):
            out[b.clip_id] = b
    return out


def inspect_cache(path) -> str:
    """Human-readable header and per-section min/max/mean; decoding validates the CRC."""
    bundles = read_cache(path)
    first = bundles[0] if bundles else None
    lines = [f"file: {path}", f"magic: {MAGIC.decode()}  version: {VERSION}  clips: {len(bundles)}"]
    if first is None:
        return "\n".join(lines + ["crc: ok"])
    l_tok = next(iter(first.layer_states.values())).shape[0] if first.layer_states else 0
    lines.append(f"D_c: {first.d_c}  L_enc: {first.encoder_tokens.shape[0]}  "
                 f"L_ar: {first.ar_tokens.shape[0]}  L_tok: {l_tok}  layers: {list(first.layer_ids)}")
    sections = {"encoder_tokens": [b.encoder_tokens for b in bundles],
                "ar_tokens": [b.ar_tokens for b in bundles]}
    for layer in first.layer_ids:
        sections[f"layer_states[{layer}]"] = [b.layer_states[layer] for b in bundles]
    for name, arrs in sections.items():
        a = np.stack(arrs).astype(np.float64)
        lines.append(f"  {name:<22} min={a.min():+.4f} max={a.max():+.4f} mean={a.mean():+.4f}")
    lines.append("crc: ok")
    return "\n".join(lines)
