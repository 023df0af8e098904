import json

import pytest

from tacorl import rngs, scripted
from tacorl.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, run
from tacorl.config import DEFAULTS, ConfigError, default_config_text, load_config, parse_lines
from tacorl.datastore import write_dataset

MICRO = [
    "collect.episodes=10",
    "lmp.epochs=1", "lmp.steps_per_epoch=8", "lmp.batch_size=16", "lmp.enc_width=16", "lmp.enc_ff=16",
    "lmp.enc_blocks=1", "lmp.prior_width=16", "lmp.dec_hidden=16", "lmp.dec_layers=1", "lmp.embed_dim=8",
    "hrl.epochs=2", "hrl.steps_per_epoch=5", "hrl.bc_warmstart_epochs=1", "hrl.batch_size=16",
    "flat.epochs=2", "flat.steps_per_epoch=5", "flat.bc_warmstart_epochs=1", "flat.batch_size=16",
    "eval.n_chains=3", "eval.two_task_rollouts=3", "eval.hard_rollouts=1", "eval.chain_budget=20",
    "eval.two_task_budget=20", "eval.hard_budget=20",
]


def sets(run_dir, extra=()):
    out = ["--set", f"run_dir={run_dir}"]
    for kv in [*MICRO, *extra]:
        out += ["--set", kv]
    return out


# ----------------------------------------------------------------- config


def test_defaults_round_trip_through_text():
    values = parse_lines(default_config_text().splitlines())
    assert values == {k: v[0] for k, v in DEFAULTS.items()}


def test_unknown_key_rejected_by_name():
    with pytest.raises(ConfigError, match="hrl.gama"):
        parse_lines(["hrl.gama = 0.9"])


def test_bad_value_rejected():
    with pytest.raises(ConfigError, match="hrl.gamma"):
        parse_lines(["hrl.gamma = fast"])


def test_env_seed_override():
    cfg = load_config(None, ["seeds=0,1"], env={"TACO_SEED": "7"})
    assert cfg.seeds == [7]


def test_config_file_and_overrides(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nhrl.epochs = 3\nseeds = 1,2\n")
    cfg = load_config(f, ["hrl.epochs=4"], env={})
    assert cfg["hrl.epochs"] == 4 and cfg.seeds == [1, 2]
    assert cfg.hash() != load_config(f, [], env={}).hash()


def test_cli_config_typo_exit_code(tmp_path, capsys):
    assert run(["collect", "--set", "colect.episodes=3", "--set", f"run_dir={tmp_path}"]) == EXIT_CONFIG
    assert "colect.episodes" in capsys.readouterr().err


def test_cli_usage_errors(capsys):
    assert run(["fly"]) == EXIT_USAGE
    assert run(["eval", "--method", "taco", "--protocol", "chain9"]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


# ---------------------------------------------------------------- inspect


def test_inspect_reports_episode_count(tmp_path, capsys):
    eps = scripted.scripted_collect(rngs.stream(0, "cli"), 3, 200)
    write_dataset(eps, tmp_path / "d")
    assert run(["inspect", "--data", str(tmp_path / "d")]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["episodes"] == 3 and rep["total_steps"] == 600


def test_missing_dataset_path(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert run(["inspect", "--data", str(missing)]) == EXIT_RUNTIME
    assert str(missing) in capsys.readouterr().err
    assert run(["train-lmp", *sets(tmp_path)]) == EXIT_RUNTIME


# --------------------------------------------------------------- pipeline


def pipeline(run_dir):
    base = sets(run_dir)
    steps = [["collect"], ["train-lmp"], ["train-hrl"], ["train-baseline", "lmp"], ["train-baseline", "cql-her"]]
    steps += [["eval", "--method", m, "--protocol", p] for m in ("taco", "lmp", "cql-her")
              for p in ("chain5", "single-goal-2task")]
    steps += [["eval", "--method", "taco", "--protocol", "hard"]]
    for s in steps:
        assert run([*s, *base]) == EXIT_OK, s


@pytest.fixture(scope="module")
def micro_runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    pipeline(a)
    pipeline(b)
    return a, b


def test_pipeline_emits_artifacts(micro_runs):
    root, _ = micro_runs
    sd = root / "seed_0"
    for f in ("data/manifest.json", "data/run.json", "lmp/model.taco", "lmp/lmp_log.csv", "lmp/run.json",
              "hrl/model.taco", "hrl/hrl_log.csv", "cql-her/model.taco", "cql-her/baseline_log.csv",
              "lmp-baseline/run.json"):
        assert (sd / f).exists(), f
    for name in ("taco-chain5", "lmp-single-goal-2task", "cql-her-chain5", "taco-hard"):
        assert (root / "eval" / name / "report.csv").exists()
        s = json.loads((root / "eval" / name / "summary.json").read_text())
        assert 0.0 <= s["avg_len_mean"] <= 5.0


def test_manifests_record_lineage(micro_runs):
    root, _ = micro_runs
    man = json.loads((root / "seed_0" / "hrl" / "run.json").read_text())
    assert man["seeds"] == [0] and len(man["config_hash"]) == 16
    assert set(man["lineage"]) == {"data", "lmp"}
    ev = json.loads((root / "eval" / "taco-chain5" / "run.json").read_text())
    assert set(ev["lineage"]) == {"seed_0/hrl", "seed_0/lmp"}


def test_pipeline_reproduces_bitwise(micro_runs):
    a, b = micro_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    assert len(files) >= 10
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_resume_flag(micro_runs):
    root, _ = micro_runs
    assert run(["train-lmp", "--resume", *sets(root)]) == EXIT_OK
    log = (root / "seed_0" / "lmp" / "lmp_log.csv").read_text().splitlines()
    assert len(log) == 1 + 8


def test_eval_needs_trained_model(tmp_path):
    assert run(["collect", *sets(tmp_path)]) == EXIT_OK
    assert run(["eval", "--method", "taco", "--protocol", "chain5", *sets(tmp_path)]) == EXIT_RUNTIME
