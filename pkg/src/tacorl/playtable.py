"""Deterministic 2-d play table: drawer, slider, light button and one block.

States and observations share one 9-vector layout::

    x, y, gripper, block_x, block_y, held, drawer, slider, light

The first three entries are proprioceptive, the last six describe the scene.
Dynamics live in the kernel backend (compiled or pure Python).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._backend import kernels
from ._kernels_py import (
    BUTTON_X,
    BUTTON_Y,
    DRAWER_X,
    DRAWER_Y0,
    HANDLE_TRAVEL,
    MAX_DELTA,
    RADIUS,
    SLIDER_X0,
    SLIDER_Y,
)

OBS_DIM = 9
ACT_DIM = 3
PROPRIO = slice(0, 3)
SCENE = slice(3, 9)
X, Y, GRIP, BX, BY, HELD, DRAWER, SLIDER, LIGHT = range(9)
OPEN, CLOSED = -1.0, 1.0
# region where the block spawns and gets placed; clear of every fixture
TABLE_LO, TABLE_HI = 0.15, 0.75

__all__ = [
    "ACT_DIM", "EnvAction", "EnvState", "MAX_DELTA", "OBS_DIM", "PROPRIO", "RADIUS", "SCENE",
    "TASKS", "TaskPredicate", "drawer_handle", "evaluate_task", "reset", "slider_handle", "step",
]


@dataclass
class EnvState:
    x: float
    y: float
    gripper: float
    block_x: float
    block_y: float
    held: float
    drawer: float
    slider: float
    light: float

    def vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.gripper, self.block_x, self.block_y,
                         self.held, self.drawer, self.slider, self.light])

    @classmethod
    def from_vector(cls, v) -> EnvState:
        return cls(*(float(a) for a in v))


@dataclass
class EnvAction:
    dx: float
    dy: float
    gripper: float

    def vector(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.gripper])


def drawer_handle(d: float) -> tuple[float, float]:
    return DRAWER_X, DRAWER_Y0 + HANDLE_TRAVEL * d


def slider_handle(s: float) -> tuple[float, float]:
    return SLIDER_X0 + HANDLE_TRAVEL * s, SLIDER_Y


BUTTON = (BUTTON_X, BUTTON_Y)


def reset(rng: np.random.Generator) -> np.ndarray:
    """Sample an initial state vector."""
    x, y = rng.uniform(0.0, 1.0, size=2)
    bx, by = rng.uniform(TABLE_LO, TABLE_HI, size=2)
    d, s = rng.uniform(0.0, 1.0, size=2)
    light = float(rng.random() < 0.5)
    return np.array([x, y, OPEN, bx, by, 0.0, d, s, light])


def step(state, action):
    """One transition. Accepts vectors or the dataclass views; returns the same kind."""
    if isinstance(state, EnvState):
        act = action.vector() if isinstance(action, EnvAction) else action
        return EnvState.from_vector(kernels.step_one(state.vector(), act))
    act = action.vector() if isinstance(action, EnvAction) else action
    return np.asarray(kernels.step_one(state, act))


def step_batch(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return kernels.step_batch(states, actions)


# ------------------------------------------------------------------ tasks
@dataclass(frozen=True)
class TaskPredicate:
    """Named success test over (initial, current) observations.

    ``zone`` is only used by ``place_block``.
    """

    name: str
    zone: tuple[float, float] | None = None

    def __post_init__(self):
        if self.name not in _PREDICATES:
            raise ValueError(f"unknown task {self.name!r}; known: {sorted(_PREDICATES)}")


def _place_ok(init, cur, zone):
    dx = cur[..., BX] - zone[0]
    dy = cur[..., BY] - zone[1]
    return (np.sqrt(dx * dx + dy * dy) < 0.05) & (cur[..., HELD] < 0.5)


_PREDICATES: dict[str, Callable] = {
    "open_drawer": lambda i, c, z: c[..., DRAWER] > 0.8,
    "close_drawer": lambda i, c, z: c[..., DRAWER] < 0.2,
    "slider_left": lambda i, c, z: c[..., SLIDER] < 0.2,
    "slider_right": lambda i, c, z: c[..., SLIDER] > 0.8,
    "light_on": lambda i, c, z: c[..., LIGHT] > 0.5,
    "light_off": lambda i, c, z: c[..., LIGHT] < 0.5,
    "lift_block": lambda i, c, z: c[..., HELD] > 0.5,
    "place_block": _place_ok,
}
TASKS = tuple(sorted(_PREDICATES))


def evaluate_task(pred: TaskPredicate | str, init, cur):
    """Success flag (or boolean array for stacked observations)."""
    if isinstance(pred, str):
        pred = TaskPredicate(pred)
    if pred.name == "place_block" and pred.zone is None:
        raise ValueError("place_block needs a zone")
    out = _PREDICATES[pred.name](np.asarray(init), np.asarray(cur), pred.zone)
    return bool(out) if np.ndim(out) == 0 else out
