"""Synthetic regime-switch world and the frozen teacher encoder.

Each clip renders J point masses as Gaussian blobs (one channel per mass) plus
a clock channel whose constant intensity is the normalized frame time. Masses
follow spring-damper dynamics toward an attractor; at the switch frame the
attractor jumps to a location chosen by the regime id and the spring
stiffens. Nothing before the switch depends on the regime id.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import binio
from . import tensor as T
from .errors import ConfigError, DataError, DimensionError
from .nn import Linear, LayerNorm, MLP, Module
from .tensor import Tensor

CLIP_MAGIC = b"TJCL"
CLIP_VERSION = 1

DYNAMICS = ("spring", "static")


@dataclass
class WorldConfig:
    n_frames: int = 40
    grid: int = 16
    n_joints: int = 2
    n_regimes: int = 4
    dynamics: str = "spring"
    switch_min: int = 5
    switch_max: int = 8
    dt: float = 0.05
    substeps: int = 16
    stiffness: float = 0.14
    post_stiffness: float = 0.56
    damping: float = 0.75
    blob_sigma: float = 1.2
    joint_radius: float = 0.06
    depth_amplitude: float = 0.1
    depth_period: float = 16.0
    init_spread: float = 0.1
    init_speed: float = 0.05

    def validate(self) -> None:
        if self.n_joints < 1:
            raise ConfigError("world needs at least one joint (J >= 1)")
        if self.n_frames < 2:
            raise ConfigError("world needs at least two frames")
        if self.grid < 2 or self.n_regimes < 1:
            raise ConfigError("grid must be >= 2 and n_regimes >= 1")
        if self.dynamics not in DYNAMICS:
            raise ConfigError(f"unknown dynamics family {self.dynamics!r}")
        if not 2 <= self.switch_min <= self.switch_max <= self.n_frames:
            raise ConfigError(f"switch range [{self.switch_min}, {self.switch_max}] invalid for "
                              f"{self.n_frames} frames")
        if self.dt <= 0 or self.substeps < 1:
            raise ConfigError("dt must be positive and substeps >= 1")

    @property
    def channels(self) -> int:
        return self.n_joints + 1


@dataclass
class Regime:
    switch_time: int
    dynamics_id: int
    attractor_pre: tuple[float, float]
    attractor_post: tuple[float, float]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Regime":
        return cls(int(d["switch_time"]), int(d["dynamics_id"]),
                   tuple(d["attractor_pre"]), tuple(d["attractor_post"]))


@dataclass
class Clip:
    clip_id: int
    frames: np.ndarray          # (N, C, G, G) float32 in [0, 1]
    trajectory: np.ndarray      # (N, J, 3) float64, meters
    regime: Regime
    seed: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def regime_attractors(n_regimes: int) -> np.ndarray:
    """Post-switch attractor per regime id, on a circle around the workspace center."""
    ang = 2 * np.pi * np.arange(n_regimes) / n_regimes + np.pi / 4
    return 0.5 + 0.28 * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def joint_offsets(cfg: WorldConfig) -> np.ndarray:
    if cfg.n_joints == 1:
        return np.zeros((1, 2))
    ang = 2 * np.pi * np.arange(cfg.n_joints) / cfg.n_joints
    return cfg.joint_radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def depth_track(cfg: WorldConfig) -> np.ndarray:
    """(N, J) fixed depth oscillation; zero-amplitude in the static family."""
    if cfg.dynamics == "static":
        return np.full((cfg.n_frames, cfg.n_joints), 0.5)
    t = np.arange(cfg.n_frames)[:, None]
    phase = 2 * np.pi * np.arange(cfg.n_joints)[None, :] / cfg.n_joints
    return 0.5 + cfg.depth_amplitude * np.sin(2 * np.pi * t / cfg.depth_period + phase)


def spring_step(pos: np.ndarray, vel: np.ndarray, target: np.ndarray, stiffness: float,
                damping: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One semi-implicit (symplectic) Euler step: velocity first, then position."""
    vel = vel + dt * (-stiffness * (pos - target) - damping * vel)
    pos = pos + dt * vel
    return pos, vel


def simulate(cfg: WorldConfig, pos0: np.ndarray, vel0: np.ndarray, regime: Regime,
             substeps: int | None = None, dt: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Integrate all joints; returns per-frame positions (N, J, 2) and velocities."""
    substeps = cfg.substeps if substeps is None else substeps
    dt = cfg.dt if dt is None else dt
    offsets = joint_offsets(cfg)
    pos, vel = pos0.copy(), vel0.copy()
    positions = np.empty((cfg.n_frames, cfg.n_joints, 2))
    velocities = np.empty_like(positions)
    positions[0], velocities[0] = pos, vel
    for frame in range(2, cfg.n_frames + 1):
        switched = frame >= regime.switch_time
        attractor = np.asarray(regime.attractor_post if switched else regime.attractor_pre)
        k = cfg.post_stiffness if switched else cfg.stiffness
        if cfg.dynamics == "static":
            k = 0.0
        for _ in range(substeps):
            pos, vel = spring_step(pos, vel, attractor + offsets, k, cfg.damping, dt)
        positions[frame - 1], velocities[frame - 1] = pos, vel
    return positions, velocities


def render(cfg: WorldConfig, positions: np.ndarray) -> np.ndarray:
    """(N, J, 2) workspace positions -> (N, J+1, G, G) frames."""
    g = cfg.grid
    centers = (np.arange(g) + 0.5) / g
    sigma = cfg.blob_sigma / g
    n = positions.shape[0]
    frames = np.empty((n, cfg.channels, g, g), dtype=np.float32)
    dx = centers[None, None, None, :] - positions[:, :, 0, None, None]
    dy = centers[None, None, :, None] - positions[:, :, 1, None, None]
    frames[:, :cfg.n_joints] = np.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))
    clock = np.arange(n) / max(cfg.n_frames - 1, 1)
    frames[:, cfg.n_joints] = clock[:, None, None]
    return frames


def generate_clip(cfg: WorldConfig, seed: int, clip_id: int | None = None) -> Clip:
    cfg.validate()
    rng = np.random.default_rng([seed, 7])
    attractor_pre = rng.uniform(0.4, 0.6, size=2)
    dynamics_id = int(rng.integers(cfg.n_regimes))
    switch_time = int(rng.integers(cfg.switch_min, cfg.switch_max + 1))
    attractor_post = regime_attractors(cfg.n_regimes)[dynamics_id]
    offsets = joint_offsets(cfg)
    if cfg.dynamics == "static":
        pos0 = attractor_pre + offsets
        vel0 = np.zeros_like(pos0)
    else:
        pos0 = attractor_pre + offsets + rng.uniform(-cfg.init_spread, cfg.init_spread, size=(1, 2))
        vel0 = rng.normal(0.0, cfg.init_speed, size=(cfg.n_joints, 2))
    regime = Regime(switch_time, dynamics_id, tuple(map(float, attractor_pre)),
                    tuple(map(float, attractor_post)))
    positions, _ = simulate(cfg, pos0, vel0, regime)
    traj = np.concatenate([positions, depth_track(cfg)[..., None]], axis=-1)
    return Clip(clip_id if clip_id is not None else seed, render(cfg, positions), traj, regime, seed)


def spring_energy(pos: np.ndarray, vel: np.ndarray, target: np.ndarray, stiffness: float) -> np.ndarray:
    return 0.5 * (vel ** 2).sum(-1) + 0.5 * stiffness * ((pos - target) ** 2).sum(-1)


# --- teacher encoder ---------------------------------------------------------------

@dataclass
class TeacherConfig:
    seed: int = 1234
    patch: int = 4
    d_latent: int = 32
    heads: int = 4
    depth: int = 2


class _TeacherBlock(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.norm1 = LayerNorm(d)
        self.qkv = Linear(d, 3 * d, rng)
        self.proj = Linear(d, d, rng)
        self.norm2 = LayerNorm(d)
        self.mlp = MLP(d, 2 * d, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h, dh = self.heads, d // self.heads
        qkv = self.qkv(self.norm1(x)).reshape(b, n, 3, h, dh).transpose(2, 0, 3, 1, 4)
        att = T.scaled_dot_attention(qkv[0], qkv[1], qkv[2])
        x = x + self.proj(att.transpose(0, 2, 1, 3).reshape(b, n, d))
        return x + self.mlp(self.norm2(x))


class TeacherEncoder(Module):
    """Seeded, frozen patch embedding plus a small attention stack.

    Parameters never receive gradients: they are stored with
    ``requires_grad=False`` and the encoder is only ever run outside a tape.
    """

    def __init__(self, cfg: TeacherConfig, channels: int, grid: int):
        if grid % cfg.patch:
            raise DimensionError(f"grid {grid} is not divisible by patch size {cfg.patch}")
        self.cfg = cfg
        self.channels, self.grid = channels, grid
        self.n_patches = (grid // cfg.patch) ** 2
        rng = np.random.default_rng([cfg.seed, 99])
        d, in_dim = cfg.d_latent, channels * cfg.patch ** 2
        self.embed = Linear(in_dim, d, rng, scale=2.0 / math.sqrt(in_dim))
        self.pos = Tensor(rng.normal(0.0, 0.5, size=(self.n_patches, d)), dtype=np.float64)
        self.blocks = [_TeacherBlock(d, cfg.heads, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(d)
        for p in self.parameters():
            p.data = p.data.astype(np.float64)
            p.requires_grad = False
        self.calib_mean = np.zeros(d)
        self.calib_std = np.ones(d)

    def patchify(self, frames: np.ndarray) -> np.ndarray:
        m, c, g, _ = frames.shape
        if c != self.channels or g != self.grid or frames.shape[3] != g:
            raise DimensionError(f"frames {frames.shape} do not match encoder ({self.channels}, {g}, {g})")
        p, gp = self.cfg.patch, g // self.cfg.patch
        x = frames.reshape(m, c, gp, p, gp, p).transpose(0, 2, 4, 1, 3, 5)
        return x.reshape(m, gp * gp, c * p * p)

    def encode_raw(self, frames: np.ndarray) -> np.ndarray:
        x = Tensor(self.patchify(np.asarray(frames, dtype=np.float64)), dtype=np.float64)
        x = self.embed(x) + self.pos
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x).data

    def encode(self, frames: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """(..., C, G, G) frames -> (..., P, D) calibrated float32 latents."""
        frames = np.asarray(frames)
        lead = frames.shape[:-3]
        flat = frames.reshape((-1,) + frames.shape[-3:])
        outs = [self.encode_raw(flat[i:i + chunk]) for i in range(0, flat.shape[0], chunk)]
        raw = np.concatenate(outs, axis=0)
        lat = (raw - self.calib_mean) / self.calib_std
        return lat.astype(np.float32).reshape(lead + lat.shape[1:])

    def calibrate(self, frames: np.ndarray) -> None:
        raw = self.encode_raw(frames.reshape((-1,) + frames.shape[-3:]))
        flat = raw.reshape(-1, raw.shape[-1])
        self.calib_mean = flat.mean(axis=0)
        self.calib_std = np.maximum(flat.std(axis=0), 1e-6)


def encode(encoder: TeacherEncoder, frames: np.ndarray) -> np.ndarray:
    return encoder.encode(frames)


# --- dataset on disk ---------------------------------------------------------------

def write_clip(clip: Clip, path: Path) -> None:
    data = binio.encode_sections(CLIP_MAGIC, CLIP_VERSION, {
        "clip_id": int(clip.clip_id),
        "seed": int(clip.seed),
        "regime": clip.regime.to_dict(),
        "frames": clip.frames.astype(np.float32),
        "trajectory": clip.trajectory.astype(np.float64),
    })
    Path(path).write_bytes(data)


def read_clip(path: Path) -> Clip:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read clip file {path}: {exc}") from None
    s = binio.decode_sections(raw, CLIP_MAGIC, CLIP_VERSION)
    try:
        regime = Regime.from_dict(json.loads(s["regime"]))
        return Clip(int(s["clip_id"]), s["frames"], s["trajectory"], regime, int(s["seed"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise binio.FormatError(f"clip file {path} is missing or has bad sections: {exc}") from None
