"""Trajectory and latent metrics, evaluated in float64 numpy."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

HORIZONS = (4, 8, 16, 32)
ACC_THRESHOLD = 0.05
CD_EPS = 1e-8


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise DimensionError(f"prediction {p.shape} and target {g.shape} differ in shape")
    return p, g


def _point_dist(pred, gt) -> np.ndarray:
    p, g = _pair(pred, gt)
    if p.shape[-1] != 3:
        raise DimensionError(f"trajectories must end in a 3-vector axis, got {p.shape}")
    return np.linalg.norm(p - g, axis=-1)


def ade(pred, gt) -> float:
    """Mean point distance over batch, frames and joints; inputs (..., T, J, 3)."""
    return float(_point_dist(pred, gt).mean())


def fde(pred, gt) -> float:
    d = _point_dist(pred, gt)
    if d.ndim < 2:
        raise DimensionError("fde needs a frame axis")
    return float(d[..., -1, :].mean())


def accuracy(pred, gt, tau: float = ACC_THRESHOLD) -> float:
    """Fraction of points strictly closer than ``tau``."""
    if tau <= 0:
        raise ConfigError(f"accuracy threshold must be positive, got {tau}")
    return float((_point_dist(pred, gt) < tau).mean())


def feature_distance(pred, target) -> float:
    """Mean over tokens of the Euclidean norm of the latent difference."""
    p, t = _pair(pred, target)
    return float(np.linalg.norm(p - t, axis=-1).mean())


def latent_smooth_l1(pred, target, beta: float = 1.0) -> float:
    p, t = _pair(pred, target)
    d = np.abs(p - t)
    return float(np.where(d < beta, 0.5 * d * d / beta, d - 0.5 * beta).mean())


def cosine_distance(pred, target, eps: float = CD_EPS) -> float:
    p, t = _pair(pred, target)
    num = (p * t).sum(axis=-1)
    den = np.linalg.norm(p, axis=-1) * np.linalg.norm(t, axis=-1) + eps
    return float((1.0 - num / den).mean())


def horizon_metrics(pred, gt, horizons=HORIZONS) -> dict[int, tuple[float, float]]:
    """A@H and F@H on the first H frames of decoded rollout trajectories (..., T, J, 3)."""
    p, g = _pair(pred, gt)
    out = {}
    for h in horizons:
        if h < 1 or h > p.shape[-3]:
            raise ConfigError(f"horizon {h} exceeds rollout length {p.shape[-3]}")
        out[h] = (ade(p[..., :h, :, :], g[..., :h, :, :]), fde(p[..., :h, :, :], g[..., :h, :, :]))
    return out


@dataclass
class MetricReport:
    ade: float
    fde: float
    accuracy: float
    fd: float
    sl1: float
    cd: float
    a_at: dict[int, float] = field(default_factory=dict)
    f_at: dict[int, float] = field(default_factory=dict)
    n_samples: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def records(self) -> list[tuple[str, int | None, float]]:
        """(metric, horizon, value) rows for JSON-lines reports."""
        rows = [(name, None, getattr(self, name)) for name in ("ade", "fde", "accuracy", "fd", "sl1", "cd")]
        rows += [("ade_at", h, v) for h, v in sorted(self.a_at.items())]
        rows += [("fde_at", h, v) for h, v in sorted(self.f_at.items())]
        return rows


def trajectory_report(pred_traj, gt_traj, pred_lat, tgt_lat, tau: float = ACC_THRESHOLD) -> MetricReport:
    return MetricReport(ade(pred_traj, gt_traj), fde(pred_traj, gt_traj), accuracy(pred_traj, gt_traj, tau),
                        feature_distance(pred_lat, tgt_lat), latent_smooth_l1(pred_lat, tgt_lat),
                        cosine_distance(pred_lat, tgt_lat), n_samples=int(np.shape(gt_traj)[0]))
