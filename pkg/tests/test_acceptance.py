"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
from __future__ import annotations

import struct
import time
from contextlib import contextmanager
from statistics import median

import numpy as np
import pytest

from guidedwm.binio import BadMagicError, ChecksumError, DecodeError, TruncatedSectionError, UnsupportedVersionError
from guidedwm.cache import decode_cache, encode_cache, read_sharded
from guidedwm.checks import run_suite
from guidedwm.cli import EXIT_OK, main
from guidedwm.config import load_config, resolve_variant
from guidedwm.guidance import GuidanceExtractor, GuidanceShape, generate_synthetic_bundle, stack_bundles
from guidedwm.metrics import accuracy, ade, cosine_distance, fde, feature_distance, latent_smooth_l1
from guidedwm.pipeline import prepare
from guidedwm.predictor import Predictor, PredictorConfig, guided_predict, predict_future, rollout
from guidedwm.probe import dense_features, fit_probe, guidance_features
from guidedwm.report import read_jsonl
from guidedwm.sampling import uniform_indices
from guidedwm.training import evaluate, load_resources, train
from guidedwm.waypoints import FAILURES, Waypoint, interpolate_waypoints, parse_waypoints
from guidedwm.world import WorldConfig, generate_clip

from oracles import accuracy_loop, ade_loop, cd_loop, fd_loop, fde_loop, sl1_loop
from test_waypoints import MALFORMED

MODES = ("film", "cross_attention", "adaln")
SEEDS = (0, 1, 2)
HORIZONS = (4, 8, 16, 32)


class Verdict:
    detail = ""


@contextmanager
def criterion(n: int, title: str, capsys):
    v = Verdict()
    ok = False
    try:
        yield v
        ok = True
    finally:
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        with capsys.disabled():
            print(f"\n{line}  {v.detail}".rstrip())


@pytest.fixture(scope="module")
def full(tmp_path_factory):
    """Default-size dataset and guidance cache."""
    root = tmp_path_factory.mktemp("full")
    cfg = load_config(overrides=[f"paths.data={root}/data", f"paths.cache={root}/cache", f"paths.out={root}/runs"])
    return cfg, prepare(cfg.validate())


@pytest.fixture(scope="module")
def directional(full):
    """Validation reports for thinkjepa and predictor_only over three seeds at the full budget."""
    base, data = full
    out = {}
    for variant in ("thinkjepa", "predictor_only"):
        for seed in SEEDS:
            cfg = resolve_variant(base, variant)
            cfg.optim.seed = seed
            res = load_resources(cfg, data)
            start = time.process_time()
            model = train(cfg, res).model
            elapsed = time.process_time() - start
            out[variant, seed] = (evaluate(model, res, "val"), elapsed)
    return out


def test_criterion_01_gradient_fidelity(capsys):
    with criterion(1, "gradient fidelity", capsys) as v:
        start = time.perf_counter()
        reports = run_suite(seeds=range(20), composite_seeds=range(3), eps=1e-5, tol=1e-4)
        elapsed = time.perf_counter() - start
        worst = max(r.max_rel_error for r in reports.values())
        v.detail = f"({len(reports)} cases, worst rel err {worst:.2e}, {elapsed:.1f}s)"
        assert all(r.passed for r in reports.values()), [str(r) for r in reports.values() if not r.passed]
        assert {f"guided_predictor[{m}]" for m in MODES} | {"trajectory_head"} <= set(reports)
        assert elapsed < 60


def test_criterion_02_baseline_reduction(capsys):
    with criterion(2, "identity guidance is bit-identical", capsys) as v:
        world, shape = WorldConfig(), GuidanceShape()
        checked = 0
        for mode in MODES:
            for seed in range(10):
                base = Predictor(PredictorConfig(), seed)
                guided = Predictor(PredictorConfig(mode=mode), seed)
                ex = GuidanceExtractor(shape.d_c, shape.layers, guided.cfg.d_p, guided.cfg.depth, mode,
                                       np.random.default_rng([seed, 301]))
                batch = stack_bundles([generate_synthetic_bundle(generate_clip(world, s, clip_id=s), world, shape, 77)
                                       for s in (seed, seed + 1)])
                cfg = base.cfg
                x = np.random.default_rng(seed).normal(size=(2, cfg.t_past, cfg.n_patches, cfg.d)).astype(np.float32)
                a = predict_future(base, x).data
                b = guided_predict(guided, x, ex(batch)).data
                assert a.tobytes() == b.tobytes(), (mode, seed)
                checked += 1
        v.detail = f"({checked} mode/seed pairs)"


def test_criterion_03_sampling(capsys):
    with criterion(3, "uniform sampling vectors", capsys):
        assert uniform_indices(64, 8) == [1, 10, 19, 28, 37, 46, 55, 64]
        assert uniform_indices(10, 4) == [1, 4, 7, 10]
        for n in range(2, 80):
            assert uniform_indices(n, n) == list(range(1, n + 1))


def test_criterion_04_metric_oracles(capsys):
    with criterion(4, "metric oracles", capsys) as v:
        worst = 0.0
        for seed in range(50):
            r = np.random.default_rng(seed)
            b, t, j, p, d = (int(x) for x in r.integers(1, 5, size=5))
            pt, gt = r.normal(scale=0.05, size=(2, b, t, j, 3))
            pl, tl = r.normal(size=(2, b, p, d))
            for fast, loop, x, y in ((ade, ade_loop, pt, gt), (fde, fde_loop, pt, gt),
                                     (accuracy, accuracy_loop, pt, gt), (feature_distance, fd_loop, pl, tl),
                                     (latent_smooth_l1, sl1_loop, pl, tl), (cosine_distance, cd_loop, pl, tl)):
                worst = max(worst, abs(fast(x, y) - loop(x, y)))
        v.detail = f"(max |diff| {worst:.1e})"
        assert worst < 1e-9
        tok = np.random.default_rng(0).normal(size=(6, 8))
        ortho = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        assert abs(cosine_distance(tok, tok) - 0.0) < 1e-7
        assert abs(cosine_distance(ortho, ortho[::-1]) - 1.0) < 1e-12
        assert abs(cosine_distance(tok, -tok) - 2.0) < 1e-7


def test_criterion_05_rollout_bookkeeping(capsys):
    with criterion(5, "rollout lengths", capsys):
        model = Predictor(PredictorConfig(t_past=4, t_future=4), 0)
        cfg = model.cfg
        x = np.random.default_rng(1).normal(size=(2, 4, cfg.n_patches, cfg.d)).astype(np.float32)
        for h in HORIZONS:
            assert rollout(model, x, None, h).shape[1] == h
        assert rollout(model, x, None, 4).data.tobytes() == predict_future(model, x).data.tobytes()


def test_criterion_06_cache_codec(capsys):
    with criterion(6, "cache codec", capsys) as v:
        world, shape = WorldConfig(), GuidanceShape()
        bundles = [generate_synthetic_bundle(generate_clip(world, s, clip_id=s), world, shape, 77) for s in range(3)]
        blob = encode_cache(bundles)
        back = decode_cache(blob)
        for a, b in zip(bundles, back):
            assert a.clip_id == b.clip_id and a.prompt_text == b.prompt_text
            assert a.encoder_tokens.tobytes() == b.encoder_tokens.tobytes()
            assert a.ar_tokens.tobytes() == b.ar_tokens.tobytes()
            assert all(a.layer_states[k].tobytes() == b.layer_states[k].tobytes() for k in a.layer_ids)
        with pytest.raises(BadMagicError):
            decode_cache(b"XXXX" + blob[4:])
        with pytest.raises(UnsupportedVersionError):
            decode_cache(blob[:4] + struct.pack("<I", 99) + blob[8:])
        with pytest.raises(TruncatedSectionError):
            decode_cache(blob[:-40])
        flipped = bytearray(blob)
        flipped[-100] ^= 0xFF
        with pytest.raises(ChecksumError):
            decode_cache(bytes(flipped))
        rng = np.random.default_rng(123)
        rejected = 0
        for _ in range(1000):
            raw = bytearray(blob)
            kind = rng.integers(3)
            if kind == 0:
                for pos in rng.integers(0, len(raw), size=rng.integers(1, 8)):
                    raw[pos] = rng.integers(256)
            elif kind == 1:
                raw = raw[:rng.integers(0, len(raw))]
            else:
                raw += bytes(rng.integers(0, 256, size=rng.integers(1, 16)).tolist())
            try:
                decode_cache(bytes(raw))
            except DecodeError:
                rejected += 1
        v.detail = f"({rejected}/1000 mutations rejected with a named error)"


@pytest.mark.slow
def test_criterion_07_directional_latent(directional, capsys):
    with criterion(7, "guided latent SL1 and ADE below predictor_only", capsys) as v:
        sl1 = {n: median(directional[n, s][0].sl1 for s in SEEDS) for n in ("thinkjepa", "predictor_only")}
        ade_ = {n: median(directional[n, s][0].ade for s in SEEDS) for n in ("thinkjepa", "predictor_only")}
        gap = 1.0 - sl1["thinkjepa"] / sl1["predictor_only"]
        slowest = max(e for _, e in directional.values())
        v.detail = (f"(SL1 {sl1['thinkjepa']:.4f} vs {sl1['predictor_only']:.4f}, gap {gap:.1%}; "
                    f"ADE {ade_['thinkjepa']:.4f} vs {ade_['predictor_only']:.4f}; slowest run {slowest:.0f}s)")
        assert slowest < 600
        assert sl1["thinkjepa"] <= 0.9 * sl1["predictor_only"]
        assert ade_["thinkjepa"] < ade_["predictor_only"]


@pytest.mark.slow
def test_criterion_08_directional_rollout(directional, capsys):
    with criterion(8, "guided A@H at or below predictor_only", capsys) as v:
        rows = []
        for h in HORIZONS:
            g = median(directional["thinkjepa", s][0].a_at[h] for s in SEEDS)
            u = median(directional["predictor_only", s][0].a_at[h] for s in SEEDS)
            rows.append((h, g, u))
        v.detail = "(" + ", ".join(f"A@{h} {g:.4f}/{u:.4f}" for h, g, u in rows) + ")"
        assert all(g <= u for _, g, u in rows)


def test_criterion_09_probe(full, capsys):
    with criterion(9, "regime probe", capsys) as v:
        cfg, data = full
        cache = read_sharded(cfg.paths.cache)
        label = {cid: clip.regime.dynamics_id for cid, clip in data.clips.items()}
        chance = 1.0 / cfg.world.n_regimes
        tr, te = data.split("train"), data.split("val")

        def probe(features):
            x_tr, x_te = np.stack([features(c) for c in tr]), np.stack([features(c) for c in te])
            p = fit_probe(x_tr, [label[c] for c in tr], cfg.world.n_regimes, ridge=10.0)
            return p.accuracy(x_te, [label[c] for c in te])

        acc_g = probe(lambda c: guidance_features(cache[c]))
        acc_d = probe(lambda c: dense_features(data.latents[c], cfg.sampling.t_past))
        v.detail = f"(guidance {acc_g:.3f}, dense window {acc_d:.3f}, chance {chance:.2f})"
        assert acc_g > 0.9
        assert abs(acc_d - chance) <= 0.10


def test_criterion_10_waypoints(capsys):
    with criterion(10, "waypoint parsing and interpolation", capsys) as v:
        for text, kind in MALFORMED.items():
            res = parse_waypoints(text, horizon=8)
            assert not res.ok and res.failure == kind and kind in FAILURES
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(200):
            horizon = int(rng.integers(2, 41))
            ts = np.sort(rng.choice(horizon, size=int(rng.integers(1, horizon + 1)), replace=False))
            wps = [Waypoint(int(t), tuple(rng.uniform(-10, 10, size=3))) for t in ts]
            traj = interpolate_waypoints(wps, horizon)
            for w in wps:
                assert tuple(traj[w.t]) == w.point
            for a, b in zip(wps, wps[1:]):
                for k in range(a.t, b.t + 1):
                    s = (k - a.t) / (b.t - a.t)
                    ref = (1 - s) * np.array(a.point) + s * np.array(b.point)
                    worst = max(worst, float(np.abs(traj[k] - ref).max()))
        v.detail = f"({len(MALFORMED)} malformed fixtures, affine max err {worst:.1e})"
        assert worst <= 1e-12


def test_criterion_11_determinism(full, tmp_path, capsys):
    with criterion(11, "train + eval determinism at seed 42", capsys) as v:
        cfg, _ = full
        args = ["--set", f"paths.data={cfg.paths.data}", "--set", f"paths.cache={cfg.paths.cache}",
                "--set", "optim.steps=100", "--set", "optim.eval_every=50"]
        values = []
        for run in ("a", "b"):
            out = tmp_path / run
            assert main(["train", *args, "--seed", "42", "--out", str(out)]) == EXIT_OK
            assert main(["eval", "--checkpoint", str(out / "checkpoint.tjck"),
                         "--out", str(tmp_path / f"{run}.jsonl")]) == EXIT_OK
            recs = [r for r in read_jsonl(tmp_path / f"{run}.jsonl") if r["type"] == "metric"]
            values.append([(r["metric"], r["horizon"], struct.pack("<d", r["value"])) for r in recs])
        capsys.readouterr()
        v.detail = f"({len(values[0])} metric values)"
        assert values[0] and values[0] == values[1]
