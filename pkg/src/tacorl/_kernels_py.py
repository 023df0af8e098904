"""Pure-Python kernels: play-table dynamics and the proprio grid query.

The compiled twin in ``_kernels.pyx`` performs the same float operations in
the same order, so both backends agree bitwise.
"""
from __future__ import annotations

import numpy as np

MAX_DELTA = 0.05
RADIUS = 0.03
RADIUS_SQ = RADIUS * RADIUS
HANDLE_TRAVEL = 0.3
DRAWER_X = 0.9
DRAWER_Y0 = 0.1
SLIDER_X0 = 0.1
SLIDER_Y = 0.9
BUTTON_X = 0.5
BUTTON_Y = 0.9


def _clip(v: float, lo: float, hi: float) -> float:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


def step_one(st, act) -> list[float]:
    """Advance one 9-float state by one 3-float action."""
    x, y, g, bx, by, held, d, s, light = (float(v) for v in st)
    dx = _clip(float(act[0]), -MAX_DELTA, MAX_DELTA)
    dy = _clip(float(act[1]), -MAX_DELTA, MAX_DELTA)
    a2 = float(act[2])
    if a2 > 0.0:
        cmd = 1.0
    elif a2 < 0.0:
        cmd = -1.0
    else:
        cmd = g
    closing = g < 0.0 and cmd > 0.0
    nx = _clip(x + dx, 0.0, 1.0)
    ny = _clip(y + dy, 0.0, 1.0)
    ax = nx - x
    ay = ny - y
    if held > 0.5:
        if cmd < 0.0:
            held = 0.0
        else:
            bx = nx
            by = ny
    else:
        ex = x - bx
        ey = y - by
        hx = x - DRAWER_X
        hy = y - (DRAWER_Y0 + HANDLE_TRAVEL * d)
        sx = x - (SLIDER_X0 + HANDLE_TRAVEL * s)
        sy = y - SLIDER_Y
        px = x - BUTTON_X
        py = y - BUTTON_Y
        if closing and ex * ex + ey * ey <= RADIUS_SQ:
            held = 1.0
            bx = nx
            by = ny
        elif cmd > 0.0 and hx * hx + hy * hy <= RADIUS_SQ:
            d = _clip(d + ay / HANDLE_TRAVEL, 0.0, 1.0)
        elif cmd > 0.0 and sx * sx + sy * sy <= RADIUS_SQ:
            s = _clip(s + ax / HANDLE_TRAVEL, 0.0, 1.0)
        elif closing and px * px + py * py <= RADIUS_SQ:
            light = 1.0 - light
    return [nx, ny, cmd, bx, by, held, d, s, light]


def step_batch(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    out = np.empty_like(states)
    for i in range(states.shape[0]):
        out[i] = step_one(states[i], actions[i])
    return out


def grid_query(keys: np.ndarray, order: np.ndarray, cell_start: np.ndarray, n_side: int, cell: float,
               q: np.ndarray, r: float) -> np.ndarray:
    """Indices i with ||keys[i] - q|| <= r, sorted ascending.

    ``order`` lists point indices grouped by 2-d cell of (key[0], key[1]);
    ``cell_start`` is the CSR offset array of length n_side**2 + 1.
    """
    q0, q1 = float(q[0]), float(q[1])
    i_lo = min(max(int(np.floor((q0 - r) / cell)), 0), n_side - 1)
    i_hi = min(max(int(np.floor((q0 + r) / cell)), 0), n_side - 1)
    j_lo = min(max(int(np.floor((q1 - r) / cell)), 0), n_side - 1)
    j_hi = min(max(int(np.floor((q1 + r) / cell)), 0), n_side - 1)
    chunks = []
    for i in range(i_lo, i_hi + 1):
        a = cell_start[i * n_side + j_lo]
        b = cell_start[i * n_side + j_hi + 1]
        if b > a:
            chunks.append(order[a:b])
    if not chunks:
        return np.empty(0, dtype=np.int64)
    cand = np.concatenate(chunks)
    diff = keys[cand] - np.asarray(q, dtype=np.float64)
    d2 = np.sum(diff * diff, axis=1)
    return np.sort(cand[d2 <= r * r])
