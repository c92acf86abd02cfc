"""Frame-index plans for the two temporal pathways of one clip.

Indices are 1-based throughout; convert with ``to_zero_based`` only when
indexing arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, ConfigError

SUPPORTED_STRIDES = (1, 2)


def uniform_indices(n_frames: int, n_samples: int) -> list[int]:
    """Sparse indices spanning the whole clip, first frame 1 and last frame N.

    s_i = floor(1 + (i - 1) * (N - 1) / (N_u - 1)), evaluated in exact integer
    arithmetic so no floating-point rounding can move an index.
    """
    if n_frames < 2:
        raise ConfigError(f"need at least 2 frames, got N={n_frames}")
    if n_samples < 2 or n_samples > n_frames:
        raise ConfigError(f"sample count N_u={n_samples} must lie in [2, N={n_frames}]")
    return [1 + ((i - 1) * (n_frames - 1)) // (n_samples - 1) for i in range(1, n_samples + 1)]


def dense_indices(t0: int, n_dense: int, n_frames: int) -> list[int]:
    if n_dense < 1:
        raise ConfigError(f"dense window length must be positive, got {n_dense}")
    if t0 < 1 or t0 + n_dense - 1 > n_frames:
        raise BoundsError(f"dense window [{t0}, {t0 + n_dense - 1}] exceeds clip of {n_frames} frames")
    return list(range(t0, t0 + n_dense))


def apply_stride(indices: list[int], stride: int) -> list[int]:
    if stride not in SUPPORTED_STRIDES:
        raise ConfigError(f"unsupported temporal stride {stride}; expected one of {SUPPORTED_STRIDES}")
    return list(indices[::stride])


def to_zero_based(indices: list[int]) -> np.ndarray:
    return np.asarray(indices, dtype=np.int64) - 1


@dataclass(frozen=True)
class SamplingPlan:
    n_frames: int
    uniform: tuple[int, ...]
    dense: tuple[int, ...]
    t0: int
    stride: int

    @property
    def n_dense(self) -> int:
        return len(self.dense)


def dense_span(n_dense: int, stride: int) -> int:
    """Raw frames covered by a window that keeps ``n_dense`` frames after striding."""
    return (n_dense - 1) * stride + 1


def make_plan(n_frames: int, n_uniform: int, n_dense: int, stride: int = 1,
              t0: int | None = None, rng: np.random.Generator | None = None,
              t0_max: int | None = None) -> SamplingPlan:
    """Build both index sets for one clip.

    ``n_dense`` counts frames kept after striding. Without an explicit ``t0``
    the window start is drawn uniformly from [1, t0_max] (training); evaluation
    passes ``t0=1``.
    """
    span = dense_span(n_dense, stride)
    last_start = n_frames - span + 1
    if last_start < 1:
        raise ConfigError(f"clip of {n_frames} frames cannot hold a window spanning {span}")
    if t0 is None:
        hi = last_start if t0_max is None else min(t0_max, last_start)
        if rng is None:
            raise ConfigError("random window placement needs an rng")
        t0 = int(rng.integers(1, hi + 1))
    raw = dense_indices(t0, span, n_frames)
    dense = apply_stride(raw, stride)
    return SamplingPlan(n_frames, tuple(uniform_indices(n_frames, n_uniform)), tuple(dense), t0, stride)
