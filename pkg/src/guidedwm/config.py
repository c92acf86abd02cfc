"""Run configuration: nested dataclasses, flat ``section.key=value`` text files, variants."""
from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .dataset import DatasetSpec
from .errors import ConfigError
from .guidance import LAYER_SUBSETS, MODES, GuidanceConfig, GuidanceShape
from .predictor import PredictorConfig
from .sampling import SUPPORTED_STRIDES
from .world import TeacherConfig, WorldConfig


@dataclass
class SamplingConfig:
    n_uniform: int = 8
    t_past: int = 4
    t_future: int = 4
    stride: int = 1
    t0_max: int = 8          # 0 lets the window start anywhere it fits

    @property
    def n_dense(self) -> int:
        return self.t_past + self.t_future


@dataclass
class ModelConfig:
    d_p: int = 32
    depth: int = 4
    heads: int = 4
    n_mask_tokens: int = 2
    mode: str = "film"
    head_blocks: int = 1


@dataclass
class GuidanceRunConfig:
    guided: bool = True
    apply_signal: bool = True      # False builds adapters but never feeds them (dead parameters)
    source: str = "thinker"        # thinker | visual
    use_encoder_tokens: bool = True
    use_ar_tokens: bool = True
    layer_subset: str = "all"      # all | last | mid | comma-separated ids
    drop_deepstack: bool = False
    zero_visual: bool = False      # hide the past latents from the predictor
    thinker_seed: int = 77

    def guidance_config(self) -> GuidanceConfig:
        subset: Any = self.layer_subset
        if subset not in LAYER_SUBSETS:
            subset = tuple(int(s) for s in str(subset).split(",") if s.strip())
        return GuidanceConfig(self.use_encoder_tokens, self.use_ar_tokens, subset, self.drop_deepstack)


@dataclass
class OptimConfig:
    lr: float = 0.15                # head and adapters
    predictor_lr: float = 0.15
    momentum: float = 0.9
    clip_norm: float = 1.0
    batch_size: int = 8
    eval_batch_size: int = 64
    steps: int = 2000
    eval_every: int = 200
    seed: int = 42


@dataclass
class LossConfig:
    lambda_lat: float = 1.0
    lambda_traj: float = 1.0
    traj_loss: str = "mse"          # mse (mean squared Euclidean) | distance (mean Euclidean)


@dataclass
class PathConfig:
    data: str = "data"
    cache: str = "cache"
    out: str = "runs"


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    thinker: GuidanceShape = field(default_factory=GuidanceShape)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    guidance: GuidanceRunConfig = field(default_factory=GuidanceRunConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    paths: PathConfig = field(default_factory=PathConfig)

    def validate(self) -> "RunConfig":
        self.world.validate()
        self.thinker.validate()
        s = self.sampling
        if s.stride not in SUPPORTED_STRIDES:
            raise ConfigError(f"stride must be one of {SUPPORTED_STRIDES}")
        if min(s.t_past, s.t_future) < 1 or not 2 <= s.n_uniform <= self.world.n_frames:
            raise ConfigError("invalid sampling sizes")
        if (s.n_dense - 1) * s.stride + 1 > self.world.n_frames:
            raise ConfigError("dense window does not fit in a clip")
        if s.t0_max < 0:
            raise ConfigError("t0_max must be >= 0")
        if self.world.switch_min <= s.t_past:
            raise ConfigError("the regime switch must come after the observed past frames")
        if self.world.grid % self.teacher.patch:
            raise ConfigError("grid is not divisible by the teacher patch size")
        self.predictor_config().validate()
        g = self.guidance
        if g.source not in ("thinker", "visual"):
            raise ConfigError(f"guidance source must be thinker or visual, got {g.source!r}")
        if g.guided and self.model.mode not in MODES:
            raise ConfigError(f"guided runs need a conditioning mode in {MODES}")
        if g.guided:
            gc = g.guidance_config()
            gc.validate()
            if not gc.use_encoder_tokens and not gc.use_ar_tokens:
                raise ConfigError("guided mode selected but every guidance source is disabled")
        o = self.optim
        if o.steps < 0 or o.batch_size < 1 or o.eval_batch_size < 1 or o.eval_every < 1:
            raise ConfigError("invalid optimizer schedule")
        if o.lr <= 0 or o.predictor_lr <= 0 or not 0 <= o.momentum < 1 or o.clip_norm <= 0:
            raise ConfigError("invalid optimizer hyperparameters")
        if self.loss.lambda_lat < 0 or self.loss.lambda_traj < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.loss.traj_loss not in ("distance", "mse"):
            raise ConfigError(f"trajectory loss must be distance or mse, got {self.loss.traj_loss!r}")
        return self

    def predictor_config(self) -> PredictorConfig:
        grid_patches = (self.world.grid // self.teacher.patch) ** 2
        builds_adapters = self.guidance.guided or not self.guidance.apply_signal
        return PredictorConfig(
            d=self.teacher.d_latent, d_p=self.model.d_p, depth=self.model.depth, heads=self.model.heads,
            n_patches=grid_patches, t_past=self.sampling.t_past, t_future=self.sampling.t_future,
            n_mask_tokens=self.model.n_mask_tokens,
            mode=self.model.mode if builds_adapters else "none")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _coerce(raw: str, current: Any, key: str) -> Any:
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(current, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if isinstance(current, tuple):
        try:
            return tuple(int(s) for s in raw.split(",") if s.strip())
        except ValueError:
            raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") from None
    return raw.strip()


def set_value(cfg: RunConfig, key: str, raw: str) -> None:
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"config keys look like section.field, got {key!r}")
    section = getattr(cfg, parts[0], None)
    if section is None or not dataclasses.is_dataclass(section):
        raise ConfigError(f"unknown config section {parts[0]!r}")
    if parts[1] not in {f.name for f in dataclasses.fields(section)}:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(section, parts[1], _coerce(raw, getattr(section, parts[1]), key))


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        k, v = pair.split("=", 1)
        set_value(cfg, k, v)
    return cfg


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then a flat ``key=value`` file (``#`` comments allowed), then overrides."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        pairs = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                pairs.append(line)
        apply_overrides(cfg, pairs)
    return apply_overrides(cfg, overrides)


def config_from_dict(d: dict) -> RunConfig:
    cfg = RunConfig()
    for section, values in d.items():
        target = getattr(cfg, section, None)
        if target is None or not dataclasses.is_dataclass(target):
            raise ConfigError(f"unknown config section {section!r}")
        names = {f.name for f in dataclasses.fields(target)}
        for k, v in values.items():
            if k not in names:
                raise ConfigError(f"unknown config key {section}.{k}")
            setattr(target, k, tuple(v) if isinstance(getattr(target, k), tuple) else v)
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        for k, v in values.items():
            if isinstance(v, (list, tuple)):
                v = ",".join(str(x) for x in v)
            lines.append(f"{section}.{k}={v}")
    return "\n".join(lines) + "\n"


VARIANTS: dict[str, dict[str, str]] = {
    "thinkjepa": {},
    "predictor_only": {"guidance.guided": "false"},
    "vlm_only": {"guidance.zero_visual": "true"},
    "encoder_plus_vj": {"guidance.use_ar_tokens": "false"},
    "encoder_only": {"guidance.use_ar_tokens": "false", "guidance.zero_visual": "true"},
    "ar_plus_vj": {"guidance.use_encoder_tokens": "false"},
    "ar_only": {"guidance.use_encoder_tokens": "false", "guidance.zero_visual": "true"},
    "no_thinker": {"guidance.guided": "false", "guidance.apply_signal": "false"},
    "layer_last": {"guidance.layer_subset": "last"},
    "layer_mid": {"guidance.layer_subset": "mid"},
    "layer_all": {"guidance.layer_subset": "all"},
    "stride1": {"sampling.stride": "1"},
    "stride2": {"sampling.stride": "2"},
    "cond_film": {"model.mode": "film"},
    "cond_xattn": {"model.mode": "cross_attention"},
    "cond_adaln": {"model.mode": "adaln"},
    "direct_visual": {"guidance.source": "visual", "guidance.use_ar_tokens": "false"},
    "drop_deepstack": {"guidance.drop_deepstack": "true"},
    "prompt_only": {"guidance.guided": "false"},
}


def resolve_variant(cfg: RunConfig, variant: str) -> RunConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    out = copy.deepcopy(cfg)
    for k, v in VARIANTS[variant].items():
        set_value(out, k, v)
    return out.validate()
