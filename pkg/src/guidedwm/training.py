"""Training loop, evaluation with rollout, and the per-run resources they share."""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .cache import read_sharded
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .dataset import Dataset, load_dataset
from .errors import ConfigError, DataError, NumericalError
from .guidance import (ConditioningSignal, GuidanceBundle, GuidanceExtractor, direct_visual_bundle,
                       filter_tokens, select_layers, stack_bundles)
from .head import TrajectoryHead
from .metrics import HORIZONS, MetricReport, horizon_metrics, trajectory_report
from .nn import Module
from .predictor import Predictor, assemble_full_sequence
from .sampling import make_plan, to_zero_based, uniform_indices
from .tensor import Tensor

log = logging.getLogger(__name__)


# --- resources ----------------------------------------------------------------------

@dataclass
class Resources:
    """Dataset, latents and filtered guidance for one resolved config."""
    cfg: RunConfig
    data: Dataset
    bundles: dict[int, GuidanceBundle] = field(default_factory=dict)
    cache_hash: str = ""

    @property
    def dataset_hash(self) -> str:
        return self.data.content_hash


def cache_hash(root) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(root).glob("shard_*.tjpc")):
        h.update(p.read_bytes())
    return h.hexdigest()


def check_dataset(cfg: RunConfig, data: Dataset) -> None:
    from dataclasses import asdict
    if asdict(cfg.world) != asdict(data.world):
        raise DataError("dataset world config differs from the run config")
    if data.d_latent != cfg.teacher.d_latent or data.n_patches != (cfg.world.grid // cfg.teacher.patch) ** 2:
        raise DataError("dataset teacher differs from the run config")


def load_resources(cfg: RunConfig, data: Dataset | None = None,
                   cache: dict[int, GuidanceBundle] | None = None) -> Resources:
    """Load the dataset (unless given) and prepare filtered guidance bundles."""
    cfg.validate()
    if data is None:
        data = load_dataset(cfg.paths.data)
    check_dataset(cfg, data)
    res = Resources(cfg, data)
    g = cfg.guidance
    if not (g.guided or not g.apply_signal):
        return res
    gcfg = g.guidance_config()
    if g.source == "visual":
        uni = to_zero_based(uniform_indices(cfg.world.n_frames, cfg.sampling.n_uniform))
        for cid, lat in data.latents.items():
            res.bundles[cid] = direct_visual_bundle(cid, lat[uni], cfg.thinker.d_c)
        res.cache_hash = "visual"
        return res
    if cache is None:
        if not Path(cfg.paths.cache).is_dir():
            raise DataError(f"guidance cache directory {cfg.paths.cache} does not exist")
        cache = read_sharded(cfg.paths.cache)
        res.cache_hash = cache_hash(cfg.paths.cache)
    for cid in data.clips:
        if cid not in cache:
            raise DataError(f"guidance cache has no entry for clip {cid}")
        b = cache[cid]
        if b.d_c != cfg.thinker.d_c or b.layer_ids != tuple(cfg.thinker.layers):
            raise DataError("guidance cache shape differs from the run config")
        res.bundles[cid] = filter_tokens(b, gcfg)
    return res


# --- model ----------------------------------------------------------------------------

class WorldModel(Module):
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        seed = cfg.optim.seed
        pcfg = cfg.predictor_config()
        self.predictor = Predictor(pcfg, seed)
        head_rng = np.random.default_rng([seed, 201])
        self.head = TrajectoryHead(pcfg.d, cfg.sampling.n_dense, cfg.world.n_joints, head_rng,
                                   n_blocks=cfg.model.head_blocks)
        self.extractor: GuidanceExtractor | None = None
        g = cfg.guidance
        if g.guided or not g.apply_signal:
            layers = () if g.source == "visual" else select_layers(cfg.thinker.layers, g.guidance_config().layer_subset)
            self.extractor = GuidanceExtractor(cfg.thinker.d_c, layers, pcfg.d_p, pcfg.depth, pcfg.mode,
                                               np.random.default_rng([seed, 301]))

    @property
    def uses_signal(self) -> bool:
        return self.extractor is not None and self.cfg.guidance.guided and self.cfg.guidance.apply_signal

    def signal(self, res: Resources, clip_ids) -> ConditioningSignal | None:
        if not self.uses_signal:
            return None
        return self.extractor(stack_bundles([res.bundles[int(c)] for c in clip_ids]))

    def param_groups(self) -> list[tuple[list[Tensor], str]]:
        rest = self.head.parameters() + (self.extractor.parameters() if self.extractor else [])
        return [(self.predictor.parameters(), "predictor_lr"), (rest, "lr")]


# --- batches ----------------------------------------------------------------------------

@dataclass
class Window:
    clip_ids: np.ndarray
    latents: np.ndarray     # (B, F, P, D) strided frames from the window start
    traj: np.ndarray        # (B, F, J, 3)


def gather(res: Resources, clip_ids, t0s, n_frames: int) -> Window:
    """Strided frames [t0, t0 + stride, ...] for each clip, ``n_frames`` of them."""
    stride = res.cfg.sampling.stride
    lat, traj = [], []
    for cid, t0 in zip(clip_ids, t0s):
        idx = to_zero_based(list(range(t0, t0 + (n_frames - 1) * stride + 1, stride)))
        lat.append(res.data.latents[int(cid)][idx])
        traj.append(res.data.clips[int(cid)].trajectory[idx])
    return Window(np.asarray(clip_ids), np.stack(lat), np.stack(traj))


def sample_batch(res: Resources, rng: np.random.Generator) -> Window:
    s, n = res.cfg.sampling, res.cfg.world.n_frames
    ids = res.data.split("train")
    chosen = [ids[i] for i in rng.integers(0, len(ids), size=res.cfg.optim.batch_size)]
    t0s = [make_plan(n, s.n_uniform, s.n_dense, s.stride, rng=rng, t0_max=s.t0_max or None).t0 for _ in chosen]
    return gather(res, chosen, t0s, s.n_dense)


def _past_input(cfg: RunConfig, past: np.ndarray) -> np.ndarray:
    return np.zeros_like(past) if cfg.guidance.zero_visual else past


def compute_loss(model: WorldModel, res: Resources, win: Window) -> tuple[Tensor, float, float]:
    cfg = res.cfg
    tp = cfg.sampling.t_past
    past = Tensor(_past_input(cfg, win.latents[:, :tp]))
    target = win.latents[:, tp:]
    pred = model.predictor(past, model.signal(res, win.clip_ids))
    lat_loss = T.smooth_l1(pred, Tensor(target), beta=1.0)
    traj = model.head(assemble_full_sequence(past, pred))
    err = traj - Tensor(win.traj[:, tp:], dtype=traj.dtype)
    if cfg.loss.traj_loss == "mse":
        traj_loss = (err * err).sum(axis=-1).mean()
    else:
        traj_loss = T.l2_norm(err, axis=-1).mean()
    loss = cfg.loss.lambda_lat * lat_loss + cfg.loss.lambda_traj * traj_loss
    return loss, float(lat_loss.data), float(traj_loss.data)


# --- optimizer -------------------------------------------------------------------------

class SGD:
    """Momentum SGD over parameter groups with a global gradient-norm clip."""

    def __init__(self, groups: list[tuple[list[Tensor], float]], momentum: float, clip_norm: float):
        self.groups = groups
        self.momentum, self.clip_norm = momentum, clip_norm
        self.velocity = {id(p): np.zeros_like(p.data) for ps, _ in groups for p in ps}

    def step(self) -> float:
        sq = sum(float((p.grad.astype(np.float64) ** 2).sum())
                 for ps, _ in self.groups for p in ps if p.grad is not None)
        norm = math.sqrt(sq)
        scale = min(1.0, self.clip_norm / norm) if norm > 0 else 1.0
        for ps, lr in self.groups:
            for p in ps:
                if p.grad is None:
                    continue
                v = self.velocity[id(p)]
                v *= self.momentum
                v += scale * p.grad
                p.data -= lr * v
                p.grad = None
        return norm


# --- evaluation --------------------------------------------------------------------------

def max_horizon(cfg: RunConfig) -> int:
    s = cfg.sampling
    frames = (cfg.world.n_frames - 1) // s.stride + 1
    return ((frames - s.t_past) // s.t_future) * s.t_future


def evaluate(model: WorldModel, res: Resources, split: str = "val", horizons=HORIZONS,
             rollout: bool = True, return_outputs: bool = False):
    """Single-window metrics at t0 = 1 plus rollout A@H / F@H for every horizon that fits."""
    cfg = res.cfg
    s = cfg.sampling
    ids = res.data.split(split)
    h_max = max_horizon(cfg) if rollout else s.t_future
    fit = [h for h in horizons if h <= h_max and h % s.t_future == 0]
    steps = max(fit) // s.t_future if fit else 1
    n_frames = s.t_past + steps * s.t_future
    preds_lat, tgts_lat, preds_traj, gts_traj = [], [], [], []
    for k in range(0, len(ids), cfg.optim.eval_batch_size):
        chunk = ids[k:k + cfg.optim.eval_batch_size]
        win = gather(res, chunk, [1] * len(chunk), n_frames)
        signal = model.signal(res, chunk)
        past = Tensor(_past_input(cfg, win.latents[:, :s.t_past]))
        lat_out, traj_out = [], []
        for _ in range(steps):
            fut = model.predictor(past, signal)
            traj_out.append(model.head(assemble_full_sequence(past, fut)).data)
            lat_out.append(fut.data)
            past = fut
        preds_lat.append(np.concatenate(lat_out, axis=1))
        preds_traj.append(np.concatenate(traj_out, axis=1))
        tgts_lat.append(win.latents[:, s.t_past:])
        gts_traj.append(win.traj[:, s.t_past:])
    pl, tl = np.concatenate(preds_lat), np.concatenate(tgts_lat)
    pt, gt = np.concatenate(preds_traj), np.concatenate(gts_traj)
    tf = s.t_future
    report = trajectory_report(pt[:, :tf], gt[:, :tf], pl[:, :tf], tl[:, :tf])
    for h, (a, f) in horizon_metrics(pt, gt, fit).items():
        report.a_at[h], report.f_at[h] = a, f
    if return_outputs:
        return report, {"clip_ids": np.asarray(ids), "pred_traj": pt, "gt_traj": gt}
    return report


# --- training ----------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: WorldModel
    best_step: int
    best_val_ade: float
    history: list[dict]
    initial_loss: float
    final_loss: float


def train(cfg: RunConfig, res: Resources | None = None, checkpoint: Path | None = None) -> TrainResult:
    """Train one run; keeps the parameters with the lowest validation ADE."""
    cfg.validate()
    res = res or load_resources(cfg)
    model = WorldModel(cfg)
    o = cfg.optim
    groups = [(ps, getattr(o, key)) for ps, key in model.param_groups()]
    opt = SGD(groups, o.momentum, o.clip_norm)
    rng = np.random.default_rng([o.seed, 5])
    history: list[dict] = []

    def validate_at(step: int) -> float:
        rep = evaluate(model, res, "val", rollout=False)
        history.append({"step": step, "val_ade": rep.ade, "val_sl1": rep.sl1})
        return rep.ade

    best_ade = validate_at(0)
    best_state, best_step = model.state_dict(), 0
    initial_loss = final_loss = float("nan")
    for step in range(1, o.steps + 1):
        win = sample_batch(res, rng)
        with T.Tape() as tape:
            loss, lat, trj = compute_loss(model, res, win)
        value = float(loss.data)
        if not math.isfinite(value):
            if checkpoint is not None:
                save_checkpoint(checkpoint, best_state, cfg.to_dict(), {"best_step": best_step, "diverged_at": step})
            raise NumericalError(f"non-finite loss at step {step}")
        if step == 1:
            initial_loss = value
        final_loss = value
        tape.backward(loss)
        gnorm = opt.step()
        if step % 50 == 0 or step == 1:
            history.append({"step": step, "loss": value, "lat": lat, "traj": trj, "grad_norm": gnorm})
        if step % o.eval_every == 0 or step == o.steps:
            ade = validate_at(step)
            if ade < best_ade:
                best_ade, best_state, best_step = ade, model.state_dict(), step
    model.load_state_dict(best_state)
    if checkpoint is not None:
        save_checkpoint(checkpoint, best_state, cfg.to_dict(), {"best_step": best_step, "best_val_ade": best_ade})
    return TrainResult(model, best_step, best_ade, history, initial_loss, final_loss)


def restore_model(cfg: RunConfig, path) -> tuple[WorldModel, dict]:
    state, _, extra = load_checkpoint(path, cfg.to_dict())
    model = WorldModel(cfg)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint parameters do not fit the model: {exc}") from None
    return model, extra


def initial_loss(cfg: RunConfig, res: Resources, n_batches: int = 4) -> float:
    """Mean loss of the freshly initialized model on a fixed set of training batches."""
    model = WorldModel(cfg)
    rng = np.random.default_rng([cfg.optim.seed, 9])
    return float(np.mean([compute_loss(model, res, sample_batch(res, rng))[0].data for _ in range(n_batches)]))
