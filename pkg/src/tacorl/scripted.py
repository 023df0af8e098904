"""Scripted proportional controller: play collection and oracle goal generation."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import playtable as pt
from .datastore import EpisodeRecord
from .playtable import BX, BY, CLOSED, DRAWER, HELD, LIGHT, OPEN, SLIDER, X, Y

GAIN = 0.5
NOISE_STD = 0.005
CONVERGE_TOL = 0.01
MAX_MOVE_STEPS = 60

AFFORDANCES = (
    "reach_handle",
    "open_drawer",
    "close_drawer",
    "move_slider",
    "press_button",
    "pick_block",
    "place_block",
)


class BudgetExhausted(Exception):
    pass


class Driver:
    """Steps one environment under scripted control and records (obs, action) pairs."""

    def __init__(self, state: np.ndarray, rng: np.random.Generator, noise: float = 0.0,
                 budget: int | None = None):
        self.state = np.array(state, dtype=np.float64)
        self.rng = rng
        self.noise = noise
        self.budget = budget
        self.obs: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []

    @property
    def t(self) -> int:
        return len(self.actions)

    def _apply(self, delta: np.ndarray, grip: float) -> None:
        if self.budget is not None and self.t >= self.budget:
            raise BudgetExhausted
        if self.noise > 0:
            delta = delta + self.rng.normal(0.0, self.noise, size=2)
        delta = np.clip(delta, -pt.MAX_DELTA, pt.MAX_DELTA)
        action = np.array([delta[0], delta[1], grip])
        self.obs.append(self.state.copy())
        self.actions.append(action)
        self.state = pt.step(self.state, action)

    def _p_control(self, target) -> np.ndarray:
        err = np.array([target[0] - self.state[X], target[1] - self.state[Y]])
        return np.clip(GAIN * err, -pt.MAX_DELTA, pt.MAX_DELTA)

    def move_to(self, target_fn: Callable[[np.ndarray], tuple[float, float]], grip: float,
                tol: float = CONVERGE_TOL, max_steps: int = MAX_MOVE_STEPS) -> bool:
        for _ in range(max_steps):
            target = target_fn(self.state)
            if np.hypot(target[0] - self.state[X], target[1] - self.state[Y]) < tol:
                return True
            self._apply(self._p_control(target), grip)
        return False

    def grip(self, value: float) -> None:
        here = (self.state[X], self.state[Y])
        self._apply(self._p_control(here), value)

    def release_if_held(self) -> None:
        if self.state[HELD] > 0.5 or self.state[pt.GRIP] > 0:
            self.grip(OPEN)


# -------------------------------------------------------------------- skills
def _drawer_skill(drv: Driver, target_d: float) -> None:
    drv.release_if_held()
    drv.move_to(lambda s: pt.drawer_handle(s[DRAWER]), OPEN)
    drv.grip(CLOSED)
    drv.move_to(lambda s: pt.drawer_handle(target_d), CLOSED)
    drv.grip(OPEN)


def _slider_skill(drv: Driver, target_s: float) -> None:
    drv.release_if_held()
    drv.move_to(lambda s: pt.slider_handle(s[SLIDER]), OPEN)
    drv.grip(CLOSED)
    drv.move_to(lambda s: pt.slider_handle(target_s), CLOSED)
    drv.grip(OPEN)


def _button_skill(drv: Driver) -> None:
    drv.release_if_held()
    drv.move_to(lambda s: pt.BUTTON, OPEN)
    drv.grip(CLOSED)
    drv.grip(OPEN)


def _grasp_block(drv: Driver) -> None:
    if drv.state[HELD] > 0.5:
        return
    drv.release_if_held()
    drv.move_to(lambda s: (s[BX], s[BY]), OPEN)
    drv.grip(CLOSED)


def _place_skill(drv: Driver, zone: tuple[float, float]) -> None:
    _grasp_block(drv)
    drv.move_to(lambda s: zone, CLOSED)
    drv.grip(OPEN)


def _reach_handle_skill(drv: Driver, rng: np.random.Generator) -> None:
    drv.release_if_held()
    if rng.random() < 0.5:
        drv.move_to(lambda s: pt.drawer_handle(s[DRAWER]), OPEN)
    else:
        drv.move_to(lambda s: pt.slider_handle(s[SLIDER]), OPEN)
    drv.grip(CLOSED)
    drv.grip(OPEN)


def random_zone(rng: np.random.Generator, away_from=None, min_dist: float = 0.2) -> tuple[float, float]:
    while True:
        z = rng.uniform(pt.TABLE_LO, pt.TABLE_HI, size=2)
        if away_from is None or np.hypot(z[0] - away_from[0], z[1] - away_from[1]) >= min_dist:
            return float(z[0]), float(z[1])


def run_affordance(drv: Driver, name: str, rng: np.random.Generator) -> None:
    if name == "reach_handle":
        _reach_handle_skill(drv, rng)
    elif name == "open_drawer":
        _drawer_skill(drv, rng.uniform(0.85, 1.0))
    elif name == "close_drawer":
        _drawer_skill(drv, rng.uniform(0.0, 0.15))
    elif name == "move_slider":
        _slider_skill(drv, rng.uniform(0.0, 1.0))
    elif name == "press_button":
        _button_skill(drv)
    elif name == "pick_block":
        # ends holding; the collector follows up with a placement
        _grasp_block(drv)
        for _ in range(int(rng.integers(2, 5))):
            drv.grip(CLOSED)
    elif name == "place_block":
        _place_skill(drv, random_zone(rng, (drv.state[BX], drv.state[BY])))
    else:
        raise ValueError(f"unknown affordance {name!r}")


def _feasible_affordances(state: np.ndarray) -> list[str]:
    if state[HELD] > 0.5:
        return ["place_block"]
    out = []
    for name in AFFORDANCES:
        if name == "open_drawer" and state[DRAWER] >= 0.8:
            continue
        if name == "close_drawer" and state[DRAWER] <= 0.2:
            continue
        out.append(name)
    return out


def scripted_collect(rng: np.random.Generator, episodes: int, steps_per_episode: int,
                     segment_log: list | None = None, first_id: int = 0) -> list[EpisodeRecord]:
    """Unsegmented play: random affordances back to back under a noisy P-controller.

    ``segment_log`` (if given) receives ``(episode, step_start, step_end, affordance)``
    tuples with inclusive ends.
    """
    if episodes < 1 or steps_per_episode < 1:
        raise ValueError("episodes and steps_per_episode must be >= 1")
    out = []
    for ep in range(episodes):
        drv = Driver(pt.reset(rng), rng, noise=NOISE_STD, budget=steps_per_episode)
        while drv.t < steps_per_episode:
            choices = _feasible_affordances(drv.state)
            name = choices[int(rng.integers(len(choices)))]
            start = drv.t
            try:
                run_affordance(drv, name, rng)
            except BudgetExhausted:
                pass
            if drv.t == start:
                # converged already and the skill emitted nothing; idle one step
                try:
                    drv.grip(drv.state[pt.GRIP])
                except BudgetExhausted:
                    break
                name = "idle"
            if segment_log is not None:
                segment_log.append((first_id + ep, start, drv.t - 1, name))
        out.append(EpisodeRecord(first_id + ep, np.array(drv.obs), np.array(drv.actions)))
    return out


# -------------------------------------------------------------------- oracle
def task_feasible(task: str, state: np.ndarray) -> bool:
    """True when the task is not already satisfied (place_block always qualifies)."""
    if task == "place_block":
        return True
    return not pt.evaluate_task(task, state, state)


def oracle_complete(state: np.ndarray, task: str, rng: np.random.Generator, noise: float = 0.0):
    """Drive a noise-free controller until ``task`` holds.

    Returns (final_state, predicate, steps).
    """
    drv = Driver(state, rng, noise=noise)
    zone = None
    if task == "open_drawer":
        _drawer_skill(drv, rng.uniform(0.9, 1.0))
    elif task == "close_drawer":
        _drawer_skill(drv, rng.uniform(0.0, 0.1))
    elif task == "slider_left":
        _slider_skill(drv, rng.uniform(0.0, 0.1))
    elif task == "slider_right":
        _slider_skill(drv, rng.uniform(0.9, 1.0))
    elif task in ("light_on", "light_off"):
        _button_skill(drv)
    elif task == "lift_block":
        _grasp_block(drv)
    elif task == "place_block":
        zone = random_zone(rng, (drv.state[BX], drv.state[BY]))
        _place_skill(drv, zone)
    else:
        raise ValueError(f"unknown task {task!r}")
    pred = pt.TaskPredicate(task, zone)
    return drv.state, pred, drv.t


def oracle_retreat(state: np.ndarray, rng: np.random.Generator, min_dist: float = 0.3) -> np.ndarray:
    """Release, then move the open gripper to a random pose at least ``min_dist`` away."""
    drv = Driver(state, rng)
    drv.release_if_held()
    while True:
        target = rng.uniform(0.05, 0.95, size=2)
        if np.hypot(target[0] - drv.state[X], target[1] - drv.state[Y]) >= min_dist:
            break
    drv.move_to(lambda s: (target[0], target[1]), OPEN, max_steps=200)
    return drv.state


def light_task_for(state: np.ndarray) -> str:
    return "light_off" if state[LIGHT] > 0.5 else "light_on"
