from __future__ import annotations

import json

import pytest

from guidedwm.checkpoint import load_checkpoint, save_checkpoint
from guidedwm.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from guidedwm.config import VARIANTS, config_from_dict, dump_config, load_config, resolve_variant
from guidedwm.errors import ConfigError
from guidedwm.report import comparison_table, read_jsonl


def test_flat_file_and_overrides(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\noptim.steps=7  # trailing\nmodel.mode=adaln\nthinker.layers=0,27\n\n")
    cfg = load_config(f, ["optim.steps=9", "guidance.drop_deepstack=yes"])
    assert cfg.optim.steps == 9 and cfg.model.mode == "adaln"
    assert cfg.thinker.layers == (0, 27) and cfg.guidance.drop_deepstack is True


@pytest.mark.parametrize("bad", ["optim.steps=x", "optim.nope=1", "nope.steps=1", "steps=1", "optim.steps",
                                 "guidance.guided=maybe"])
def test_bad_overrides(bad):
    with pytest.raises(ConfigError):
        load_config(overrides=[bad])


@pytest.mark.parametrize("bad", ["sampling.stride=3", "model.heads=3", "world.switch_min=3", "optim.lr=0",
                                 "model.mode=gating", "loss.traj_loss=l1"])
def test_validation_errors(bad):
    with pytest.raises(ConfigError):
        load_config(overrides=[bad]).validate()


def test_dump_round_trip(tmp_path):
    cfg = load_config(overrides=["optim.seed=3", "thinker.layers=1,2"])
    f = tmp_path / "c.cfg"
    f.write_text(dump_config(cfg))
    assert load_config(f).to_dict() == cfg.to_dict()
    assert config_from_dict(json.loads(cfg.to_json())).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("name", sorted(VARIANTS))
def test_every_variant_resolves(name):
    base = load_config()
    cfg = resolve_variant(base, name)
    assert cfg is not base and base.to_dict() == load_config().to_dict()


def test_unknown_variant():
    with pytest.raises(ConfigError):
        resolve_variant(load_config(), "nope")


def test_checkpoint_config_mismatch(tmp_path):
    cfg = load_config().to_dict()
    save_checkpoint(tmp_path / "c.tjck", {"w": [[1.0]]}, cfg, {"best_step": 3})
    state, _, extra = load_checkpoint(tmp_path / "c.tjck", cfg)
    assert state["w"].tolist() == [[1.0]] and extra == {"best_step": 3}
    moved = load_config(overrides=["paths.out=elsewhere"]).to_dict()
    load_checkpoint(tmp_path / "c.tjck", moved)
    other = load_config(overrides=["optim.lr=0.2"]).to_dict()
    with pytest.raises(ConfigError, match="optim.lr"):
        load_checkpoint(tmp_path / "c.tjck", other)


def test_comparison_table_medians():
    recs = [{"type": "metric", "variant": "a", "metric": "ade", "horizon": None, "value": v} for v in (1.0, 3.0, 2.0)]
    table = comparison_table(recs)
    assert "a" in table and "2.0000" in table


# --- CLI ------------------------------------------------------------------------------------

def paths(small_run):
    cfg, _ = small_run
    return ["--set", f"paths.data={cfg.paths.data}", "--set", f"paths.cache={cfg.paths.cache}",
            "--set", "dataset.n_train=24", "--set", "dataset.n_val=8", "--set", "dataset.n_test=8",
            "--set", "dataset.n_calibration=16", "--set", "optim.steps=10", "--set", "optim.eval_every=5",
            "--set", "optim.batch_size=4"]


def test_cli_train_eval_rollout(small_run, tmp_path, capsys):
    args = paths(small_run)
    out = tmp_path / "run"
    assert main(["train", *args, "--seed", "42", "--out", str(out)]) == EXIT_OK
    ck = out / "checkpoint.tjck"
    log = read_jsonl(out / "train_log.jsonl")
    assert log[0]["type"] == "meta" and len(log[0]["dataset_hash"]) == 64 and log[0]["cache_hash"]
    assert main(["eval", "--checkpoint", str(ck), "--out", str(tmp_path / "e.jsonl")]) == EXIT_OK
    recs = read_jsonl(tmp_path / "e.jsonl")
    assert recs[0]["config"]["optim"]["seed"] == 42
    assert {"ade", "fde", "accuracy", "fd", "sl1", "cd", "ade_at", "fde_at"} <= {r.get("metric") for r in recs}
    assert main(["rollout", "--checkpoint", str(ck), "--out", str(tmp_path / "r.json")]) == EXIT_OK
    payload = json.loads((tmp_path / "r.json").read_text())
    assert len(payload["pred"][0]) == 32
    # a run config that differs from the checkpoint is refused
    assert main(["eval", "--checkpoint", str(ck), *args, "--set", "optim.lr=0.3"]) == EXIT_CONFIG
    capsys.readouterr()


def test_cli_inspect_and_gen_cache(small_run, tmp_path, capsys):
    cfg, _ = small_run
    assert main(["inspect-cache", cfg.paths.cache]) == EXIT_OK
    assert "crc: ok" in capsys.readouterr().out
    assert main(["gen-cache", *paths(small_run), "--out", str(tmp_path / "c")]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "c").iterdir())[0] == "shard_00000.tjpc"
    bad = tmp_path / "bad.tjpc"
    bad.write_bytes(b"TJPC\x01\x00")
    assert main(["inspect-cache", str(bad)]) == EXIT_DATA


def test_cli_exit_codes(small_run, tmp_path, capsys):
    assert main(["train", "--set", "optim.nope=1"]) == EXIT_CONFIG
    assert main(["train", "--variant", "bogus"]) == EXIT_CONFIG
    assert main(["train", "--set", f"paths.data={tmp_path / 'none'}"]) == EXIT_DATA
    assert main(["inspect-cache", str(tmp_path / "none")]) == EXIT_DATA
    diverge = paths(small_run) + ["--set", "optim.lr=1e30", "--set", "optim.predictor_lr=1e30",
                                  "--set", "optim.clip_norm=1e30"]
    with pytest.warns(RuntimeWarning):
        assert main(["train", *diverge, "--out", str(tmp_path / "d")]) == EXIT_NUMERIC
    capsys.readouterr()


def test_cli_grid(small_run, tmp_path, capsys):
    assert main(["grid", *paths(small_run), "--variants", "", "--out", str(tmp_path / "g0")]) == EXIT_OK
    assert read_jsonl(tmp_path / "g0" / "grid.jsonl") == []
    assert main(["grid", *paths(small_run), "--variants", "predictor_only,prompt_only", "--seeds", "1",
                 "--out", str(tmp_path / "g")]) == EXIT_OK
    recs = read_jsonl(tmp_path / "g" / "grid.jsonl")
    assert {r["variant"] for r in recs} == {"predictor_only", "prompt_only"}
    parse = [r for r in recs if r["type"] == "parse"][0]
    assert sum(parse["counts"].values()) == parse["n_samples"]
    table = (tmp_path / "g" / "table.txt").read_text()
    assert "predictor_only" in table
    capsys.readouterr()
