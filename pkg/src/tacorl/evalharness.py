"""Goal-conditioned evaluation: sub-goal chains, single-goal two-task rollouts and retreat goals.

All rollouts of a protocol run in lockstep as one batch. Policies expose
``reset(n)``, ``restart(mask)`` (new goal for flagged envs) and
``act(obs, goals) -> actions``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import playtable as pt
from . import scripted

CHAIN_TASKS = ("open_drawer", "close_drawer", "slider_left", "slider_right", "light_on", "light_off", "place_block")
HARD_TASKS = ("open_drawer", "slider_left", "light_on", "place_block")
OBJECT_OF = {
    "open_drawer": "drawer", "close_drawer": "drawer", "slider_left": "slider", "slider_right": "slider",
    "light_on": "light", "light_off": "light", "place_block": "block", "lift_block": "block",
}
CHAIN_BUDGET = 90
TWO_TASK_BUDGET = 150
HARD_BUDGET = 90
REPORT_COLUMNS = ("method", "seed", "chain_id", "position", "success", "steps_used")


@dataclass
class ChainSpec:
    init_state: np.ndarray
    tasks: list[str]
    goals: np.ndarray  # (L, 9) oracle observations after each task
    zones: list = field(default_factory=list)  # place_block zone per position (None otherwise)
    budget: int = CHAIN_BUDGET

    @property
    def total_budget(self) -> int:
        return self.budget * len(self.tasks)

    def predicate(self, i: int) -> pt.TaskPredicate:
        return pt.TaskPredicate(self.tasks[i], self.zones[i])


def _pick_task(rng: np.random.Generator, state: np.ndarray, pool, exclude=()) -> str:
    options = [t for t in pool if t not in exclude and scripted.task_feasible(t, state)]
    return options[int(rng.integers(len(options)))]


def make_chain(rng: np.random.Generator, length: int = 5, budget: int = CHAIN_BUDGET, pool=CHAIN_TASKS) -> ChainSpec:
    """Feasible, not-yet-satisfied tasks with no immediate repeats; goals from a noise-free oracle."""
    s0 = pt.reset(rng)
    state = s0
    tasks, goals, zones = [], [], []
    for _ in range(length):
        task = _pick_task(rng, state, pool, exclude=tasks[-1:])
        state, pred, _ = scripted.oracle_complete(state, task, rng)
        tasks.append(task)
        goals.append(state.copy())
        zones.append(pred.zone)
    return ChainSpec(s0, tasks, np.array(goals), zones, budget)


def make_chains(rng: np.random.Generator, n: int, length: int = 5, budget: int = CHAIN_BUDGET) -> list[ChainSpec]:
    return [make_chain(rng, length, budget) for _ in range(n)]


def make_two_task_goal(rng: np.random.Generator, budget: int = TWO_TASK_BUDGET) -> ChainSpec:
    """Two tasks on different objects; one goal observation showing both done."""
    s0 = pt.reset(rng)
    first = _pick_task(rng, s0, CHAIN_TASKS)
    mid, p1, _ = scripted.oracle_complete(s0, first, rng)
    second = _pick_task(rng, mid, [t for t in CHAIN_TASKS if OBJECT_OF[t] != OBJECT_OF[first]])
    end, p2, _ = scripted.oracle_complete(mid, second, rng)
    return ChainSpec(s0, [first, second], np.array([end, end]), [p1.zone, p2.zone], budget)


def make_hard_goal(rng: np.random.Generator, task: str, budget: int = HARD_BUDGET) -> ChainSpec:
    """Goal captured after the oracle completes ``task`` and retreats at least 0.3 away."""
    while True:
        s0 = pt.reset(rng)
        if scripted.task_feasible(task, s0):
            break
    done, pred, _ = scripted.oracle_complete(s0, task, rng)
    goal = scripted.oracle_retreat(done, rng)
    return ChainSpec(s0, [task], goal[None], [pred.zone], budget)


# ------------------------------------------------------------- rollouts
def _check(specs: list[ChainSpec], pos: np.ndarray, init: np.ndarray, states: np.ndarray, rows: np.ndarray):
    out = np.zeros(len(rows), dtype=bool)
    for j, i in enumerate(rows):
        out[j] = pt.evaluate_task(specs[i].predicate(pos[i]), init[i], states[i])
    return out


def run_chains(policy, specs: list[ChainSpec]) -> dict:
    """Lockstep rollouts; a sub-goal advances on success or when its budget runs out.

    Returns per-position ``success`` and ``steps_used`` arrays (n, L) and
    ``length`` (successes before the first failure).
    """
    n = len(specs)
    L = len(specs[0].tasks)
    states = np.array([s.init_state for s in specs], dtype=np.float64)
    init = states.copy()
    pos = np.zeros(n, dtype=np.int64)
    used = np.zeros(n, dtype=np.int64)
    success = np.zeros((n, L), dtype=bool)
    steps_used = np.zeros((n, L), dtype=np.int64)
    policy.reset(n)
    budgets = np.array([s.budget for s in specs])
    while True:
        # resolve successes (possibly several instant ones) and expired budgets
        changed = np.zeros(n, dtype=bool)
        while True:
            active = np.flatnonzero(pos < L)
            if len(active) == 0:
                break
            ok = _check(specs, pos, init, states, active)
            expired = used[active] >= budgets[active]
            adv = active[ok | expired]
            if len(adv) == 0:
                break
            success[adv, pos[adv]] = ok[ok | expired]
            steps_used[adv, pos[adv]] = used[adv]
            pos[adv] += 1
            used[adv] = 0
            init[adv] = states[adv]
            changed[adv] = True
        active = pos < L
        if not active.any():
            break
        policy.restart(changed)
        goals = np.array([specs[i].goals[min(pos[i], L - 1)] for i in range(n)])
        acts = policy.act(states, goals)
        # finished envs hold still
        acts[~active, :2] = 0.0
        acts[~active, 2] = states[~active, pt.GRIP]
        states = pt.step_batch(states, acts)
        used[active] += 1
    return {"success": success, "steps_used": steps_used, "length": prefix_length(success)}


def prefix_length(success: np.ndarray) -> np.ndarray:
    """Count of consecutive successes from position 1."""
    return np.cumprod(success, axis=1).sum(axis=1)


def run_chain(policy, chain: ChainSpec) -> dict:
    return run_chains(policy, [chain])


def run_single_goal_multi_task(policy, specs: list[ChainSpec]) -> dict:
    """One rollout per spec toward a single goal; task successes latch.

    ``success[:, 0]`` is the first task, ``success[:, 1]`` both tasks.
    """
    n = len(specs)
    states = np.array([s.init_state for s in specs], dtype=np.float64)
    init = states.copy()
    goals = np.array([s.goals[-1] for s in specs])
    L = len(specs[0].tasks)
    hit = np.zeros((n, L), dtype=bool)
    hit_step = np.zeros((n, L), dtype=np.int64)
    budget = specs[0].budget
    policy.reset(n)

    def latch(t):
        for i in range(n):
            for j in range(L):
                if not hit[i, j] and pt.evaluate_task(specs[i].predicate(j), init[i], states[i]):
                    hit[i, j] = True
                    hit_step[i, j] = t

    latch(0)
    for t in range(1, budget + 1):
        if hit.all():
            break
        states = pt.step_batch(states, policy.act(states, goals))
        latch(t)
    cum = np.cumprod(hit, axis=1).astype(bool)
    steps = np.where(cum, np.maximum.accumulate(hit_step, axis=1), budget)
    return {"success": cum, "steps_used": steps, "length": cum.sum(axis=1), "task_hits": hit}


def run_hard(policy, specs: list[ChainSpec]) -> dict:
    """Single-task rollouts with success latched over the budget."""
    out = run_single_goal_multi_task(policy, specs)
    out["tasks"] = [s.tasks[0] for s in specs]
    return out


# ---------------------------------------------------------------- reports
def emit_report(outcomes: list[dict], out_dir, method: str) -> dict:
    """``outcomes`` holds one dict per seed (keys: seed, success, steps_used, optional tasks).

    Writes report.csv and summary.json; returns the summary.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    per_seed_len = []
    all_success = []
    per_task: dict[str, list] = {}
    for oc in outcomes:
        succ = np.asarray(oc["success"], dtype=bool)
        used = np.asarray(oc["steps_used"])
        for c in range(succ.shape[0]):
            for p in range(succ.shape[1]):
                rows.append((method, oc["seed"], c, p + 1, int(succ[c, p]), int(used[c, p])))
        per_seed_len.append(float(prefix_length(succ).mean()))
        all_success.append(succ)
        for task, ok in zip(oc.get("tasks", []), succ[:, 0]):
            per_task.setdefault(task, []).append(bool(ok))
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)
    summary = summarize(rows)
    summary["method"] = method
    summary["seeds"] = [oc["seed"] for oc in outcomes]
    if per_task:
        summary["per_task"] = {k: float(np.mean(v)) for k, v in sorted(per_task.items())}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def load_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("seed", "chain_id", "position", "success", "steps_used"):
            r[k] = int(r[k])
    return rows


def summarize(rows) -> dict:
    """Recompute the summary from report rows (tuples or loaded dicts)."""
    recs = [r if isinstance(r, dict) else dict(zip(REPORT_COLUMNS, r)) for r in rows]
    seeds = sorted({r["seed"] for r in recs})
    L = max(r["position"] for r in recs)
    by_seed = {}
    for s in seeds:
        chains = sorted({r["chain_id"] for r in recs if r["seed"] == s})
        grid = np.zeros((len(chains), L), dtype=bool)
        cidx = {c: i for i, c in enumerate(chains)}
        for r in recs:
            if r["seed"] == s:
                grid[cidx[r["chain_id"]], r["position"] - 1] = bool(r["success"])
        by_seed[s] = grid
    lengths = np.array([prefix_length(g).mean() for g in by_seed.values()])
    stacked = np.concatenate(list(by_seed.values()))
    cum = np.cumprod(stacked, axis=1)
    summary = {
        "method": recs[0]["method"],
        "n_chains": int(len(stacked)),
        "avg_len_mean": float(lengths.mean()),
        "avg_len_std": float(lengths.std()),
    }
    for i in range(L):
        summary[f"sr_{i + 1}"] = float(cum[:, i].mean())
    return summary
