"""Trajectory regression head: attention pooling, temporal mixing, stride-2 pooling, linear readout."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import LayerNorm, Linear, MLP, Module, param
from .tensor import Tensor


class TemporalBlock(Module):
    """Mixer-style block: an MLP across frames, then an MLP across channels.

    Norms carry no affine and the MLPs no bias, so an all-zero input stays zero.
    """

    def __init__(self, n_frames: int, d: int, rng: np.random.Generator, expansion: int = 2):
        self.norm_t = LayerNorm(d, affine=False)
        self.mix_t = MLP(n_frames, expansion * n_frames, n_frames, rng, bias=False)
        self.norm_c = LayerNorm(d, affine=False)
        self.mix_c = MLP(d, expansion * d, d, rng, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        # x is (B, T, D)
        y = self.mix_t(self.norm_t(x).transpose(0, 2, 1)).transpose(0, 2, 1)
        x = x + y
        return x + self.mix_c(self.norm_c(x))


class TrajectoryHead(Module):
    def __init__(self, d: int, n_frames: int, n_joints: int, rng: np.random.Generator,
                 n_blocks: int = 1, downsample: int = 2, bias_init: float = 0.5):
        if n_frames % downsample:
            raise DimensionError(f"{n_frames} input frames are not divisible by the downsample factor {downsample}")
        self.d, self.n_frames, self.n_joints, self.downsample = d, n_frames, n_joints, downsample
        self.query = param(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, 1)))
        self.blocks = [TemporalBlock(n_frames, d, rng) for _ in range(n_blocks)]
        self.out = Linear(d, 3 * n_joints, rng, scale=0.1 / np.sqrt(d))
        self.out.bias.data[:] = bias_init

    @property
    def t_out(self) -> int:
        return self.n_frames // self.downsample

    def pool(self, tokens: Tensor) -> Tensor:
        """(B, T, P, D) -> (B, T, D) with a learnable query; keys and values are the tokens."""
        scores = T.matmul(tokens, self.query) * (1.0 / np.sqrt(self.d))      # (B, T, P, 1)
        weights = T.softmax(scores, axis=2).transpose(0, 1, 3, 2)            # (B, T, 1, P)
        pooled = T.matmul(weights, tokens)                                   # (B, T, 1, D)
        b, t = tokens.shape[:2]
        return pooled.reshape(b, t, self.d)

    def __call__(self, tokens) -> Tensor:
        tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens, dtype=self.query.dtype)
        if tokens.ndim != 4 or tokens.shape[1] != self.n_frames or tokens.shape[3] != self.d:
            raise DimensionError(f"head expects (B, {self.n_frames}, P, {self.d}), got {tokens.shape}")
        x = self.pool(tokens)
        for block in self.blocks:
            x = block(x)
        b = x.shape[0]
        x = x.reshape(b, self.t_out, self.downsample, self.d).mean(axis=2)
        return self.out(x).reshape(b, self.t_out, self.n_joints, 3)


def predict_trajectory(head: TrajectoryHead, tokens) -> Tensor:
    return head(tokens)
