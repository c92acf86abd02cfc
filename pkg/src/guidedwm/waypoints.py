"""Prompt-only baseline: strict JSON waypoint parsing and piecewise-linear interpolation."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

FAILURES = ("malformed_json", "schema", "duplicate_t", "non_monotone_t", "out_of_range_t", "empty")
_KEYS = {"t", "x", "y", "z"}


@dataclass
class Waypoint:
    t: int
    point: tuple[float, float, float]


@dataclass
class ParseResult:
    waypoints: list[Waypoint] = field(default_factory=list)
    failure: str | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.failure is None


def _reject_constant(name: str):
    raise ValueError(f"non-finite literal {name}")


def _fail(kind: str, detail: str) -> ParseResult:
    return ParseResult(failure=kind, detail=detail)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_waypoints(text, horizon: int | None = None) -> ParseResult:
    """Parse ``[{"t": int, "x": num, "y": num, "z": num}, ...]``; never raises on bad input."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            return _fail("malformed_json", f"invalid UTF-8: {exc}")
    if not isinstance(text, str):
        return _fail("malformed_json", f"expected text, got {type(text).__name__}")
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except (ValueError, RecursionError) as exc:
        return _fail("malformed_json", str(exc)[:200])
    if not isinstance(data, list):
        return _fail("schema", "top level must be an array")
    if not data:
        return _fail("empty", "no waypoints")
    out: list[Waypoint] = []
    for i, item in enumerate(data):
        if not isinstance(item, dict) or set(item) != _KEYS:
            return _fail("schema", f"item {i} must be an object with exactly keys t, x, y, z")
        t = item["t"]
        if not isinstance(t, int) or isinstance(t, bool):
            return _fail("schema", f"item {i}: t must be an integer")
        if not all(_is_number(item[k]) for k in "xyz"):
            return _fail("schema", f"item {i}: x, y, z must be finite numbers")
        out.append(Waypoint(t, (float(item["x"]), float(item["y"]), float(item["z"]))))
    ts = [w.t for w in out]
    if len(set(ts)) != len(ts):
        return _fail("duplicate_t", f"repeated frame index in {ts}")
    if any(b < a for a, b in zip(ts, ts[1:])):
        return _fail("non_monotone_t", f"frame indices not increasing: {ts}")
    hi = horizon - 1 if horizon is not None else None
    if ts[0] < 0 or (hi is not None and ts[-1] > hi):
        return _fail("out_of_range_t", f"frame indices {ts} outside [0, {hi}]")
    return ParseResult(out)


def interpolate_waypoints(waypoints, horizon: int, n_joints: int | None = None) -> np.ndarray:
    """Piecewise-linear trajectory (T_f, 3), or (T_f, J, 3) when ``n_joints`` is given.

    Frames before the first and after the last waypoint hold the nearest value.
    """
    if not waypoints:
        raise ConfigError("cannot interpolate an empty waypoint list")
    if horizon < 1:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    ts = np.array([w.t for w in waypoints], dtype=np.float64)
    pts = np.array([w.point for w in waypoints], dtype=np.float64)
    if np.any(np.diff(ts) <= 0) or ts[0] < 0 or ts[-1] > horizon - 1:
        raise ConfigError("waypoint frames must be strictly increasing within [0, T_f-1]")
    frames = np.arange(horizon, dtype=np.float64)
    traj = np.stack([np.interp(frames, ts, pts[:, k]) for k in range(3)], axis=-1)
    if n_joints is not None:
        traj = np.broadcast_to(traj[:, None, :], (horizon, n_joints, 3)).copy()
    return traj


def fixture_path(root, clip_id: int) -> Path:
    return Path(root) / "prompt_fixtures" / f"{clip_id}.txt"


def evaluate_fixtures(root, clip_ids, horizon: int) -> tuple[dict[int, np.ndarray], Counter]:
    """Parse every fixture; returns interpolated trajectories and a count of outcomes."""
    trajs: dict[int, np.ndarray] = {}
    counts: Counter = Counter()
    for cid in clip_ids:
        path = fixture_path(root, cid)
        try:
            text = path.read_bytes()
        except OSError:
            counts["missing"] += 1
            continue
        res = parse_waypoints(text, horizon)
        counts[res.failure or "ok"] += 1
        if res.ok:
            trajs[cid] = interpolate_waypoints(res.waypoints, horizon)
    return trajs, counts


_BAD_KINDS = ("truncated", "prose", "duplicate", "reversed", "out_of_range", "missing_key", "nan")


def synthetic_fixture(clip, t_past: int, t_future: int, seed: int = 0) -> str:
    """Stand-in text answer for one clip: sometimes valid waypoints, often not.

    Valid answers are noisy guesses at the joint-mean future path; the rest
    reproduce typical failure shapes of free-form model output.
    """
    rng = np.random.default_rng([seed, 31, clip.clip_id])
    future = clip.trajectory[t_past:t_past + t_future].mean(axis=1)
    ts = sorted(rng.choice(t_future, size=min(3, t_future), replace=False).tolist())

    def item(t, p):
        return {"t": int(t), "x": round(float(p[0]), 4), "y": round(float(p[1]), 4), "z": round(float(p[2]), 4)}

    pts = [item(t, future[t] + rng.normal(0.0, 0.05, 3)) for t in ts]
    if rng.random() < 0.4:
        return json.dumps(pts)
    kind = _BAD_KINDS[int(rng.integers(len(_BAD_KINDS)))]
    if kind == "truncated":
        return json.dumps(pts)[:-5]
    if kind == "prose":
        return "The hand moves toward the target. Waypoints:\n```json\n" + json.dumps(pts) + "\n```"
    if kind == "duplicate":
        return json.dumps(pts + [dict(pts[-1])])
    if kind == "reversed":
        return json.dumps(pts[::-1]) if len(pts) > 1 else json.dumps(pts + [dict(pts[0], t=-1)])
    if kind == "out_of_range":
        return json.dumps(pts + [item(t_future + 3, future[-1])])
    if kind == "missing_key":
        return json.dumps([{k: v for k, v in p.items() if k != "z"} for p in pts])
    return json.dumps(pts).replace(str(pts[0]["x"]), "NaN", 1)


def write_fixture(root, clip, t_past: int, t_future: int, seed: int = 0) -> None:
    path = fixture_path(root, clip.clip_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(synthetic_fixture(clip, t_past, t_future, seed))
