import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tacorl import playtable as pt
from tacorl.baselines import RandomActionPolicy
from tacorl.evalharness import (
    CHAIN_TASKS,
    REPORT_COLUMNS,
    ChainSpec,
    emit_report,
    load_report,
    make_chain,
    make_hard_goal,
    make_two_task_goal,
    prefix_length,
    run_chain,
    run_chains,
    run_hard,
    run_single_goal_multi_task,
    summarize,
)


class StillPolicy:
    """Never moves; keeps the gripper as is."""

    def reset(self, n):
        self.restarts = []

    def restart(self, which):
        self.restarts.append(np.asarray(which).copy())

    def act(self, obs, goals):
        return np.zeros((len(obs), 3))


def done_state():
    return pt.EnvState(x=0.5, y=0.5, gripper=-1.0, block_x=0.3, block_y=0.3, held=0.0, drawer=0.05,
                       slider=0.05, light=1.0).vector()


# ------------------------------------------------------------------ specs


def test_chain_spec_is_consistent():
    rng = np.random.default_rng(0)
    for _ in range(20):
        c = make_chain(rng)
        assert len(c.tasks) == 5 and c.goals.shape == (5, 9)
        assert all(a != b for a, b in zip(c.tasks, c.tasks[1:]))
        assert all(t in CHAIN_TASKS for t in c.tasks)
        prev = c.init_state
        for i, g in enumerate(c.goals):
            assert pt.evaluate_task(c.predicate(i), prev, g)
            prev = g


def test_two_task_goal_touches_two_objects():
    rng = np.random.default_rng(1)
    for _ in range(20):
        c = make_two_task_goal(rng)
        assert len(c.tasks) == 2
        assert np.array_equal(c.goals[0], c.goals[1])
        for i in range(2):
            assert pt.evaluate_task(c.predicate(i), c.init_state, c.goals[1])


def test_hard_goal_has_effector_away():
    rng = np.random.default_rng(2)
    for task in ("open_drawer", "light_on"):
        c = make_hard_goal(rng, task)
        g = c.goals[0]
        assert g[pt.GRIP] == pt.OPEN and g[pt.HELD] == 0.0
        assert pt.evaluate_task(c.predicate(0), c.init_state, g)


# --------------------------------------------------------------- rollouts


def test_instantly_satisfied_chain_has_length_five():
    s0 = done_state()
    tasks = ["light_on", "close_drawer", "slider_left", "light_on", "close_drawer"]
    spec = ChainSpec(s0, tasks, np.repeat(s0[None], 5, axis=0), [None] * 5)
    out = run_chain(StillPolicy(), spec)
    assert out["length"].tolist() == [5]
    assert out["steps_used"].tolist() == [[0] * 5]


def test_impossible_first_task_gives_zero():
    s0 = done_state()
    spec = ChainSpec(s0, ["open_drawer", "light_on", "light_on", "light_on", "light_on"],
                     np.repeat(s0[None], 5, axis=0), [None] * 5, budget=20)
    out = run_chain(StillPolicy(), spec)
    assert out["length"].tolist() == [0]
    # later positions are still scored after the budget expires
    assert out["success"][0].tolist() == [False, True, True, True, True]
    assert out["steps_used"][0, 0] == 20


def test_zero_budget_fails_unless_already_done():
    s0 = done_state()
    ok = ChainSpec(s0, ["light_on"], s0[None], [None], budget=0)
    bad = ChainSpec(s0, ["open_drawer"], s0[None], [None], budget=0)
    assert run_chains(StillPolicy(), [ok, bad])["success"][:, 0].tolist() == [True, False]


def test_rollouts_deterministic():
    specs = [make_chain(np.random.default_rng(3)) for _ in range(10)]
    a = run_chains(RandomActionPolicy(np.random.default_rng(4)), specs)
    b = run_chains(RandomActionPolicy(np.random.default_rng(4)), specs)
    assert np.array_equal(a["success"], b["success"]) and np.array_equal(a["steps_used"], b["steps_used"])


def test_policy_restarted_on_advance():
    s0 = done_state()
    spec = ChainSpec(s0, ["open_drawer", "light_off"], np.repeat(s0[None], 2, axis=0), [None] * 2, budget=3)
    pol = StillPolicy()
    run_chain(pol, spec)
    flagged = [i for i, r in enumerate(pol.restarts) if r[0]]
    assert flagged == [3]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.booleans(), min_size=5, max_size=5), min_size=1, max_size=30))
def test_prefix_length_matches_recount(grid):
    succ = np.array(grid)
    brute = []
    for row in grid:
        n = 0
        for ok in row:
            if not ok:
                break
            n += 1
        brute.append(n)
    assert prefix_length(succ).tolist() == brute


def test_two_task_goal_equal_to_start():
    s0 = done_state()
    spec = ChainSpec(s0, ["light_on", "close_drawer"], np.repeat(s0[None], 2, axis=0), [None] * 2, budget=10)
    out = run_single_goal_multi_task(StillPolicy(), [spec])
    assert out["success"].tolist() == [[True, True]]
    spec = ChainSpec(s0, ["open_drawer", "light_on"], np.repeat(s0[None], 2, axis=0), [None] * 2, budget=10)
    out = run_single_goal_multi_task(StillPolicy(), [spec])
    assert out["success"].tolist() == [[False, False]]
    assert out["task_hits"].tolist() == [[False, True]]


def test_two_task_success_never_exceeds_one_task():
    rng = np.random.default_rng(5)
    specs = [make_two_task_goal(rng, budget=150) for _ in range(100)]
    out = run_single_goal_multi_task(RandomActionPolicy(np.random.default_rng(6)), specs)
    assert np.all(out["success"][:, 1] <= out["success"][:, 0])
    assert out["success"][:, 1].mean() <= out["success"][:, 0].mean()


def test_hard_protocol_reports_tasks():
    rng = np.random.default_rng(7)
    specs = [make_hard_goal(rng, "light_on", budget=30) for _ in range(5)]
    out = run_hard(StillPolicy(), specs)
    assert out["tasks"] == ["light_on"] * 5
    assert out["success"].shape == (5, 1) and not out["success"].any()


# ---------------------------------------------------------------- reports


def outcome(seed, n=20, L=5):
    rng = np.random.default_rng(seed)
    return {"seed": seed, "success": rng.random((n, L)) < 0.7, "steps_used": rng.integers(0, 90, size=(n, L))}


def test_report_files_and_schema(tmp_path):
    summary = emit_report([outcome(0), outcome(1)], tmp_path, "taco")
    with open(tmp_path / "report.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert tuple(header) == REPORT_COLUMNS
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk == summary
    for key in ("method", "n_chains", "sr_1", "sr_5", "avg_len_mean", "avg_len_std"):
        assert key in on_disk
    assert on_disk["n_chains"] == 40


def test_summary_equals_recount_from_rows(tmp_path):
    outs = [outcome(s) for s in (0, 1, 2)]
    summary = emit_report(outs, tmp_path, "lmp")
    rows = load_report(tmp_path / "report.csv")
    again = summarize(rows)
    for k in ("avg_len_mean", "avg_len_std", "sr_1", "sr_3", "sr_5", "n_chains"):
        assert again[k] == summary[k]
    lens = [prefix_length(o["success"]).mean() for o in outs]
    assert summary["avg_len_mean"] == pytest.approx(np.mean(lens), abs=1e-12)
    assert summary["avg_len_std"] == pytest.approx(np.std(lens), abs=1e-12)
    stacked = np.concatenate([o["success"] for o in outs])
    assert summary["sr_2"] == pytest.approx(np.mean(stacked[:, 0] & stacked[:, 1]), abs=1e-12)


def test_single_seed_std_is_zero(tmp_path):
    assert emit_report([outcome(4)], tmp_path, "cql-her")["avg_len_std"] == 0.0


def test_rates_and_lengths_in_range(tmp_path):
    s = emit_report([outcome(5), outcome(6)], tmp_path, "taco")
    assert all(0.0 <= s[f"sr_{i}"] <= 1.0 for i in range(1, 6))
    assert all(s[f"sr_{i}"] >= s[f"sr_{i + 1}"] for i in range(1, 5))
    assert 0.0 <= s["avg_len_mean"] <= 5.0


def test_per_task_table(tmp_path):
    oc = {"seed": 0, "success": np.array([[True], [False], [True]]), "steps_used": np.zeros((3, 1), int),
          "tasks": ["light_on", "light_on", "open_drawer"]}
    s = emit_report([oc], tmp_path, "taco")
    assert s["per_task"] == {"light_on": 0.5, "open_drawer": 1.0}
