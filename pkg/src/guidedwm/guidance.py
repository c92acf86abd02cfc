"""Thinker guidance: synthetic cached features, token filtering, and pyramid extraction.

The stand-in thinker embeds each clip's global parameters (attractor
positions, regime id, switch time) with fixed seeded matrices and adds
Gaussian noise. Encoder tokens carry the spatial content, AR tokens the event
sequence, and the per-layer hidden states carry everything with noise that
fades out toward the deepest layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import Linear, MLP, Module
from .tensor import Tensor
from .world import Clip, WorldConfig

MODES = ("film", "cross_attention", "adaln")
LAYER_SUBSETS = ("all", "last", "mid")


@dataclass
class GuidanceShape:
    d_c: int = 32
    l_enc: int = 16
    l_ar: int = 15
    layers: tuple[int, ...] = (0, 4, 8, 12, 16, 20, 24, 27)
    l_tok: int = 8
    noise: float = 0.5

    def validate(self) -> None:
        if min(self.d_c, self.l_enc, self.l_ar, self.l_tok) < 1:
            raise ConfigError("guidance dimensions must be positive")
        if not self.layers or list(self.layers) != sorted(set(self.layers)):
            raise ConfigError(f"pyramid layer ids must be non-empty and strictly increasing: {self.layers}")


@dataclass
class GuidanceBundle:
    clip_id: int
    encoder_tokens: np.ndarray                 # (L_enc, D_c)
    ar_tokens: np.ndarray                      # (L_ar, D_c)
    layer_states: dict[int, np.ndarray]        # layer id -> (L_tok, D_c)
    prompt_text: str = ""

    @property
    def d_c(self) -> int:
        return self.encoder_tokens.shape[1]

    @property
    def layer_ids(self) -> tuple[int, ...]:
        return tuple(self.layer_states)


@dataclass
class GuidanceConfig:
    use_encoder_tokens: bool = True
    use_ar_tokens: bool = True
    layer_subset: str | tuple[int, ...] = "all"
    drop_deepstack: bool = False

    def validate(self) -> None:
        if isinstance(self.layer_subset, str) and self.layer_subset not in LAYER_SUBSETS:
            raise ConfigError(f"layer_subset must be one of {LAYER_SUBSETS} or a list of ids")


# --- synthetic thinker --------------------------------------------------------------

def _features(clip: Clip, world: WorldConfig) -> tuple[np.ndarray, np.ndarray]:
    """Spatial features for encoder tokens and event features for AR tokens."""
    r = clip.regime
    spatial = np.concatenate([(np.asarray(r.attractor_pre) - 0.5) / 0.2,
                              (np.asarray(r.attractor_post) - 0.5) / 0.2, [1.0]])
    onehot = np.zeros(world.n_regimes)
    onehot[r.dynamics_id] = 1.0
    span = max(world.switch_max - world.switch_min, 1)
    ts = (r.switch_time - 0.5 * (world.switch_min + world.switch_max)) / (0.5 * span)
    events = np.concatenate([onehot, [ts, 1.0]])
    return spatial, events


def ts_feature_index(world: WorldConfig) -> int:
    """Position of the switch-time coordinate inside the AR feature vector."""
    return world.n_regimes


@dataclass
class ThinkerEmbedding:
    enc: np.ndarray       # (L_enc, D_c, f_enc)
    ar: np.ndarray        # (L_ar, D_c, f_ar)
    layers: np.ndarray    # (n_layers, L_tok, D_c, f_enc + f_ar)


def thinker_embedding(shape: GuidanceShape, world: WorldConfig, thinker_seed: int) -> ThinkerEmbedding:
    rng = np.random.default_rng([thinker_seed, 11])
    f_enc, f_ar = 5, world.n_regimes + 2
    f_all = f_enc + f_ar
    return ThinkerEmbedding(
        rng.normal(size=(shape.l_enc, shape.d_c, f_enc)) / np.sqrt(f_enc),
        rng.normal(size=(shape.l_ar, shape.d_c, f_ar)) / np.sqrt(f_ar),
        rng.normal(size=(len(shape.layers), shape.l_tok, shape.d_c, f_all)) / np.sqrt(f_all),
    )


def generate_synthetic_bundle(clip: Clip, world: WorldConfig, shape: GuidanceShape,
                              thinker_seed: int, noise_free: bool = False) -> GuidanceBundle:
    shape.validate()
    emb = thinker_embedding(shape, world, thinker_seed)
    spatial, events = _features(clip, world)
    full = np.concatenate([spatial, events])
    rng = np.random.default_rng([thinker_seed, 13, clip.clip_id])
    sigma = 0.0 if noise_free else shape.noise

    enc = emb.enc @ spatial + sigma * rng.normal(size=(shape.l_enc, shape.d_c))
    ar = emb.ar @ events + sigma * rng.normal(size=(shape.l_ar, shape.d_c))
    states = {}
    n = len(shape.layers)
    for i, layer in enumerate(shape.layers):
        clean = emb.layers[i] @ full
        alpha = i / (n - 1) if n > 1 else 1.0
        noise = rng.normal(size=clean.shape)
        states[layer] = (clean if noise_free else alpha * clean + (1.0 - alpha) * noise).astype(np.float32)
    prompt = (f"Summarize the activity in this clip of {world.n_joints} tracked markers "
              f"over {world.n_frames} frames (clip {clip.clip_id}).")
    return GuidanceBundle(clip.clip_id, enc.astype(np.float32), ar.astype(np.float32), states, prompt)


def direct_visual_bundle(clip_id: int, uniform_latents: np.ndarray, d_c: int, seed: int = 0) -> GuidanceBundle:
    """Bundle whose encoder tokens are teacher latents of the uniformly sampled frames.

    ``uniform_latents`` is (N_u, P, D). A fixed seeded projection maps D to
    D_c when they differ.
    """
    tokens = uniform_latents.reshape(-1, uniform_latents.shape[-1]).astype(np.float64)
    if tokens.shape[1] != d_c:
        proj = np.random.default_rng([seed, 17]).normal(size=(tokens.shape[1], d_c)) / np.sqrt(tokens.shape[1])
        tokens = tokens @ proj
    return GuidanceBundle(clip_id, tokens.astype(np.float32), np.zeros((1, d_c), np.float32), {},
                          "direct visual features")


# --- filtering ------------------------------------------------------------------------

def select_layers(layer_ids: Sequence[int], subset) -> tuple[int, ...]:
    ids = tuple(layer_ids)
    if not ids:
        return ()
    if subset == "all":
        return ids
    if subset == "last":
        return (ids[-1],)
    if subset == "mid":
        return (ids[len(ids) // 2],)
    chosen = tuple(int(x) for x in subset)
    unknown = [x for x in chosen if x not in ids]
    if unknown:
        raise ConfigError(f"layers {unknown} are not in the cached pyramid {ids}")
    return tuple(x for x in ids if x in chosen)


def filter_tokens(bundle: GuidanceBundle, cfg: GuidanceConfig) -> GuidanceBundle:
    """Hard-zero disabled sources and keep only the selected pyramid layers.

    Layer hidden states belong to the language-model side, so disabling AR
    tokens zero-fills them too; ``drop_deepstack`` zero-fills AR tokens only.
    """
    cfg.validate()
    keep = select_layers(bundle.layer_ids, cfg.layer_subset)
    if not cfg.use_encoder_tokens and not cfg.use_ar_tokens:
        raise ConfigError("guided mode selected but every guidance source is disabled")
    enc = bundle.encoder_tokens if cfg.use_encoder_tokens else np.zeros_like(bundle.encoder_tokens)
    ar = bundle.ar_tokens
    if not cfg.use_ar_tokens or cfg.drop_deepstack:
        ar = np.zeros_like(ar)
    states = {}
    for layer in keep:
        s = bundle.layer_states[layer]
        states[layer] = s if cfg.use_ar_tokens else np.zeros_like(s)
    return replace(bundle, encoder_tokens=enc, ar_tokens=ar, layer_states=states)


# --- batching and extraction -----------------------------------------------------------

@dataclass
class GuidanceBatch:
    encoder: np.ndarray                  # (B, L_enc, D_c)
    ar: np.ndarray                       # (B, L_ar, D_c)
    layers: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def batch_size(self) -> int:
        return self.encoder.shape[0]


def stack_bundles(bundles: Sequence[GuidanceBundle]) -> GuidanceBatch:
    first = bundles[0]
    for b in bundles[1:]:
        if b.layer_ids != first.layer_ids:
            raise DimensionError("bundles in one batch must share the layer set")
    return GuidanceBatch(
        np.stack([b.encoder_tokens for b in bundles]),
        np.stack([b.ar_tokens for b in bundles]),
        {layer: np.stack([b.layer_states[layer] for b in bundles]) for layer in first.layer_ids},
    )


@dataclass
class ConditioningSignal:
    mode: str
    gammas: list[Tensor] = field(default_factory=list)    # per block, (B, D_p)
    betas: list[Tensor] = field(default_factory=list)
    context: Tensor | None = None                         # (B, M, D_p)

    @classmethod
    def identity(cls, mode: str, batch: int, d_p: int, depth: int) -> "ConditioningSignal":
        if mode == "cross_attention":
            raise ConfigError("cross-attention has no closed-form identity signal; use zero-init adapters")
        ones = Tensor(np.ones((batch, d_p)))
        zeros = Tensor(np.zeros((batch, d_p)))
        return cls(mode, [ones] * depth, [zeros] * depth)


class GuidanceExtractor(Module):
    """Project each source/layer to D_p, pool, concatenate, and map to per-block parameters.

    For cross-attention the pooling is skipped and the projected tokens of
    every source become the context sequence.
    """

    def __init__(self, d_c: int, layer_ids: Sequence[int], d_p: int, depth: int, mode: str,
                 rng: np.random.Generator, hidden: int | None = None):
        if mode not in MODES:
            raise ConfigError(f"unknown conditioning mode {mode!r}")
        self.mode, self.d_c, self.d_p, self.depth = mode, d_c, d_p, depth
        self.layer_ids = tuple(layer_ids)
        self.proj_enc = Linear(d_c, d_p, rng)
        self.proj_ar = Linear(d_c, d_p, rng)
        self.proj_layers = [Linear(d_c, d_p, rng) for _ in self.layer_ids]
        n_src = 2 + len(self.layer_ids)
        hidden = hidden or 2 * d_p
        self.adapters = []
        if mode != "cross_attention":
            self.adapters = [MLP(n_src * d_p, hidden, 2 * d_p, rng, zero_out=True) for _ in range(depth)]

    def _projected(self, batch: GuidanceBatch) -> list[Tensor]:
        if batch.encoder.shape[-1] != self.d_c:
            raise DimensionError(f"bundle width {batch.encoder.shape[-1]} != adapter input {self.d_c}")
        if tuple(batch.layers) != self.layer_ids:
            raise DimensionError(f"bundle layers {tuple(batch.layers)} != adapter layers {self.layer_ids}")
        dt = self.proj_enc.weight.dtype
        out = [self.proj_enc(Tensor(batch.encoder, dtype=dt)), self.proj_ar(Tensor(batch.ar, dtype=dt))]
        for proj, layer in zip(self.proj_layers, self.layer_ids):
            out.append(proj(Tensor(batch.layers[layer], dtype=dt)))
        return out

    def pooled(self, batch: GuidanceBatch) -> Tensor:
        """(B, n_src * D_p) concatenation of mean-pooled projections."""
        return T.concat([T.mean_pool(p, axis=1) for p in self._projected(batch)], axis=-1)

    def __call__(self, batch: GuidanceBatch) -> ConditioningSignal:
        if self.mode == "cross_attention":
            return ConditioningSignal(self.mode, context=T.concat(self._projected(batch), axis=1))
        g = self.pooled(batch)
        gammas, betas = [], []
        for adapter in self.adapters:
            out = adapter(g)
            gammas.append(1.0 + out[:, :self.d_p])
            betas.append(out[:, self.d_p:])
        return ConditioningSignal(self.mode, gammas, betas)


def extract_guidance(bundles: Sequence[GuidanceBundle], extractor: GuidanceExtractor,
                     cfg: GuidanceConfig) -> ConditioningSignal:
    return extractor(stack_bundles([filter_tokens(b, cfg) for b in bundles]))
