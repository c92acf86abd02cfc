"""Masked-token transformer predictor with optional thinker conditioning and rollout."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .guidance import MODES, ConditioningSignal
from .nn import LayerNorm, Linear, MLP, Module, param
from .tensor import Tensor

PREDICTOR_MODES = ("none",) + MODES


@dataclass
class PredictorConfig:
    d: int = 32
    d_p: int = 16
    depth: int = 4
    heads: int = 4
    n_patches: int = 16
    t_past: int = 4
    t_future: int = 4
    n_mask_tokens: int = 2
    mlp_ratio: int = 2
    mode: str = "none"

    def validate(self) -> None:
        if self.mode not in PREDICTOR_MODES:
            raise ConfigError(f"conditioning mode must be one of {PREDICTOR_MODES}, got {self.mode!r}")
        if min(self.d, self.d_p, self.depth, self.heads, self.n_patches, self.t_past,
               self.t_future, self.n_mask_tokens, self.mlp_ratio) < 1:
            raise ConfigError("predictor dimensions must be positive")
        if self.d_p % self.heads:
            raise ConfigError(f"d_p={self.d_p} is not divisible by heads={self.heads}")
        if (self.d_p // self.heads) % 2:
            raise ConfigError("rotary encoding needs an even per-head width")

    @property
    def n_tokens(self) -> int:
        return (self.t_past + self.t_future) * self.n_patches

    def to_dict(self) -> dict:
        return asdict(self)


def rope_tables(n_frames: int, n_patches: int, head_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables (n, head_dim/2) over the flattened index frame * P + patch.

    Angular frequencies run geometrically from 2*pi/P (one turn per frame of
    patches) down to 2*pi/(2n), so the slowest pair never wraps.
    """
    n = n_frames * n_patches
    half = head_dim // 2
    hi, lo = 2 * math.pi / n_patches, 2 * math.pi / (2 * n)
    freqs = hi * (lo / hi) ** (np.arange(half) / max(half - 1, 1)) if half > 1 else np.array([hi])
    angles = np.arange(n)[:, None] * freqs[None, :]
    return np.cos(angles), np.sin(angles)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, e = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * e)


def film_modulate(z: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """gamma * z + beta with (B, C) parameters broadcast over z's token axis (B, n, C)."""
    if gamma.shape != beta.shape or gamma.shape[-1] != z.shape[-1]:
        raise DimensionError(f"film: gamma {gamma.shape} / beta {beta.shape} do not match channels of {z.shape}")
    if gamma.ndim == 1:
        return z * gamma + beta
    if gamma.ndim != 2 or gamma.shape[0] != z.shape[0] or z.ndim != 3:
        raise DimensionError(f"film: cannot apply per-sample parameters {gamma.shape} to {z.shape}")
    b, c = gamma.shape
    g = T.broadcast(gamma.reshape(b, 1, c), z.shape)
    bt = T.broadcast(beta.reshape(b, 1, c), z.shape)
    return z * g + bt


class CrossAttention(Module):
    def __init__(self, d_p: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.norm = LayerNorm(d_p)
        self.q = Linear(d_p, d_p, rng)
        self.k = Linear(d_p, d_p, rng)
        self.v = Linear(d_p, d_p, rng)
        self.out = Linear(d_p, d_p, rng, zero_init=True)

    def __call__(self, h: Tensor, context: Tensor) -> Tensor:
        q = _split_heads(self.q(self.norm(h)), self.heads)
        k = _split_heads(self.k(context), self.heads)
        v = _split_heads(self.v(context), self.heads)
        return self.out(_merge_heads(T.scaled_dot_attention(q, k, v)))


class Block(Module):
    """Pre-norm transformer block; conditioning hooks in at the input or the norms."""

    def __init__(self, d_p: int, heads: int, mlp_ratio: int, rng: np.random.Generator):
        self.heads = heads
        self.norm1 = LayerNorm(d_p)
        self.qkv = Linear(d_p, 3 * d_p, rng)
        self.proj = Linear(d_p, d_p, rng)
        self.norm2 = LayerNorm(d_p)
        self.mlp = MLP(d_p, mlp_ratio * d_p, d_p, rng)
        self.xattn: CrossAttention | None = None

    def _norm(self, norm: LayerNorm, x: Tensor, adaln: tuple[Tensor, Tensor] | None) -> Tensor:
        if adaln is None:
            return norm(x)
        return film_modulate(T.layer_norm(x, eps=norm.eps), *adaln)

    def __call__(self, x: Tensor, cos: np.ndarray, sin: np.ndarray, signal: ConditioningSignal | None,
                 index: int) -> Tensor:
        adaln = None
        if signal is not None and signal.mode == "film":
            x = film_modulate(x, signal.gammas[index], signal.betas[index])
        elif signal is not None and signal.mode == "adaln":
            adaln = (signal.gammas[index], signal.betas[index])
        d_p = x.shape[-1]
        qkv = self.qkv(self._norm(self.norm1, x, adaln))
        q = T.rope(_split_heads(qkv[..., :d_p], self.heads), cos, sin)
        k = T.rope(_split_heads(qkv[..., d_p:2 * d_p], self.heads), cos, sin)
        v = _split_heads(qkv[..., 2 * d_p:], self.heads)
        x = x + self.proj(_merge_heads(T.scaled_dot_attention(q, k, v)))
        if signal is not None and signal.mode == "cross_attention":
            x = x + self.xattn(x, signal.context)
        return x + self.mlp(self._norm(self.norm2, x, adaln))


class Predictor(Module):
    """Past tokens plus mask tokens in, future tokens out.

    Core weights come from ``seed`` alone; conditioning-only weights (the
    cross-attention sublayers) use a separate stream so that every mode shares
    the same core initialization as the unguided model.
    """

    def __init__(self, cfg: PredictorConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng([seed, 101])
        self.embed = Linear(cfg.d, cfg.d_p, rng)
        self.mask_tokens = param(rng.normal(0.0, 0.02, size=(cfg.n_mask_tokens, cfg.d_p)))
        # learned (future frame, patch) position carried by each mask-token copy
        self.future_pos = param(rng.normal(0.0, 0.02, size=(cfg.t_future * cfg.n_patches, cfg.d_p)))
        self.blocks = [Block(cfg.d_p, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.d_p)
        self.head = Linear(cfg.d_p, cfg.d, rng)
        if cfg.mode == "cross_attention":
            cond_rng = np.random.default_rng([seed, 103])
            for block in self.blocks:
                block.xattn = CrossAttention(cfg.d_p, cfg.heads, cond_rng)
        self._cos, self._sin = rope_tables(cfg.t_past + cfg.t_future, cfg.n_patches, cfg.d_p // cfg.heads)

    def _check_past(self, past: Tensor) -> None:
        c = self.cfg
        if past.ndim != 4 or past.shape[1:] != (c.t_past, c.n_patches, c.d):
            raise DimensionError(f"past tokens {past.shape} do not match (B, {c.t_past}, {c.n_patches}, {c.d})")

    def _check_signal(self, signal: ConditioningSignal | None, batch: int) -> None:
        if signal is None:
            return
        if signal.mode != self.cfg.mode:
            raise ConfigError(f"signal mode {signal.mode!r} does not match predictor mode {self.cfg.mode!r}")
        if signal.mode == "cross_attention":
            if signal.context is None or signal.context.shape[0] != batch or signal.context.shape[-1] != self.cfg.d_p:
                raise DimensionError("cross-attention context must be (B, M, d_p)")
        elif len(signal.gammas) != self.cfg.depth or len(signal.betas) != self.cfg.depth:
            raise DimensionError(f"signal has {len(signal.gammas)} blocks, predictor has {self.cfg.depth}")

    def __call__(self, past, signal: ConditioningSignal | None = None) -> Tensor:
        c = self.cfg
        past = past if isinstance(past, Tensor) else Tensor(past, dtype=self.embed.weight.dtype)
        self._check_past(past)
        b = past.shape[0]
        self._check_signal(signal, b)
        h_past = self.embed(past).reshape(b, c.t_past * c.n_patches, c.d_p)
        # future frame f uses mask token f mod n_mask_tokens, copied over its patches
        rows = [self.mask_tokens[f % c.n_mask_tokens:f % c.n_mask_tokens + 1] for f in range(c.t_future)]
        fut = T.concat([T.broadcast(r, (c.n_patches, c.d_p)) for r in rows], axis=0) + self.future_pos
        fut = T.broadcast(fut, (b, c.t_future * c.n_patches, c.d_p))
        h = T.concat([h_past, fut], axis=1)
        for i, block in enumerate(self.blocks):
            h = block(h, self._cos, self._sin, signal, i)
        out = self.head(self.norm(h[:, c.t_past * c.n_patches:]))
        return out.reshape(b, c.t_future, c.n_patches, c.d)


def predict_future(model: Predictor, past) -> Tensor:
    return model(past, None)


def guided_predict(model: Predictor, past, signal: ConditioningSignal) -> Tensor:
    return model(past, signal)


def rollout(model: Predictor, initial_past, signal: ConditioningSignal | None, horizon: int) -> Tensor:
    """Feed each predicted window back as the next past; returns (B, H, P, D)."""
    c = model.cfg
    if horizon < 1 or horizon % c.t_future:
        raise ConfigError(f"horizon {horizon} must be a positive multiple of T_f={c.t_future}")
    if c.t_past != c.t_future:
        raise ConfigError("rollout by replacement needs T_p == T_f")
    past, outs = initial_past, []
    for _ in range(horizon // c.t_future):
        past = model(past, signal)
        outs.append(past)
    return outs[0] if len(outs) == 1 else T.concat(outs, axis=1)


def assemble_full_sequence(past, future) -> Tensor:
    if 0 in np.shape(future.data if isinstance(future, Tensor) else future):
        raise ConfigError("future segment is empty")
    past = past if isinstance(past, Tensor) else Tensor(past)
    future = future if isinstance(future, Tensor) else Tensor(future)
    if past.ndim != 4 or future.ndim != 4:
        raise DimensionError(f"expected rank-4 latents, got {past.shape} and {future.shape}")
    if past.shape[0] != future.shape[0] or past.shape[2:] != future.shape[2:]:
        raise DimensionError(f"cannot join past {past.shape} with future {future.shape}")
    return T.concat([past, future], axis=1)
