# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled play-table dynamics and proprio grid query.

Mirrors ``_kernels_py`` operation for operation; keep the two in sync.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

cdef double MAX_DELTA = 0.05
cdef double RADIUS = 0.03
cdef double RADIUS_SQ = RADIUS * RADIUS
cdef double HANDLE_TRAVEL = 0.3
cdef double DRAWER_X = 0.9
cdef double DRAWER_Y0 = 0.1
cdef double SLIDER_X0 = 0.1
cdef double SLIDER_Y = 0.9
cdef double BUTTON_X = 0.5
cdef double BUTTON_Y = 0.9


cdef inline double _clip(double v, double lo, double hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef void _step(const double* st, const double* act, double* out) noexcept nogil:
    cdef double x = st[0], y = st[1], g = st[2], bx = st[3], by = st[4]
    cdef double held = st[5], d = st[6], s = st[7], light = st[8]
    cdef double dx = _clip(act[0], -MAX_DELTA, MAX_DELTA)
    cdef double dy = _clip(act[1], -MAX_DELTA, MAX_DELTA)
    cdef double a2 = act[2]
    cdef double cmd
    cdef bint closing
    cdef double nx, ny, ax, ay, ex, ey, hx, hy, sx, sy, px, py
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
    out[0] = nx
    out[1] = ny
    out[2] = cmd
    out[3] = bx
    out[4] = by
    out[5] = held
    out[6] = d
    out[7] = s
    out[8] = light


def step_one(st, act):
    cdef double s_buf[9]
    cdef double a_buf[3]
    cdef double o_buf[9]
    cdef int i
    for i in range(9):
        s_buf[i] = st[i]
    for i in range(3):
        a_buf[i] = act[i]
    _step(s_buf, a_buf, o_buf)
    return [o_buf[i] for i in range(9)]


def step_batch(states, actions):
    cdef double[:, ::1] S = np.ascontiguousarray(states, dtype=np.float64)
    cdef double[:, ::1] A = np.ascontiguousarray(actions, dtype=np.float64)
    cdef Py_ssize_t n = S.shape[0], i
    out = np.empty((n, 9), dtype=np.float64)
    cdef double[:, ::1] O = out
    if A.shape[0] != n or S.shape[1] != 9 or A.shape[1] != 3:
        raise ValueError("step_batch expects states (n, 9) and actions (n, 3)")
    with nogil:
        for i in range(n):
            _step(&S[i, 0], &A[i, 0], &O[i, 0])
    return out


cdef inline Py_ssize_t _cell_index(double v, double cell, Py_ssize_t n_side) nogil:
    cdef Py_ssize_t k = <Py_ssize_t> floor(v / cell)
    if k < 0:
        return 0
    if k > n_side - 1:
        return n_side - 1
    return k


def grid_query(keys, order, cell_start, Py_ssize_t n_side, double cell, q, double r):
    cdef double[:, ::1] K = np.ascontiguousarray(keys, dtype=np.float64)
    cdef long long[::1] O = np.ascontiguousarray(order, dtype=np.int64)
    cdef long long[::1] C = np.ascontiguousarray(cell_start, dtype=np.int64)
    cdef double q0 = q[0], q1 = q[1], q2 = q[2]
    cdef double r2 = r * r
    cdef Py_ssize_t i_lo = _cell_index(q0 - r, cell, n_side)
    cdef Py_ssize_t i_hi = _cell_index(q0 + r, cell, n_side)
    cdef Py_ssize_t j_lo = _cell_index(q1 - r, cell, n_side)
    cdef Py_ssize_t j_hi = _cell_index(q1 + r, cell, n_side)
    cdef Py_ssize_t i, t, a, b, n_hit = 0
    cdef long long idx
    cdef double d0, d1, d2
    total = 0
    for i in range(i_lo, i_hi + 1):
        total += C[i * n_side + j_hi + 1] - C[i * n_side + j_lo]
    hits = np.empty(total, dtype=np.int64)
    cdef long long[::1] H = hits
    with nogil:
        for i in range(i_lo, i_hi + 1):
            a = C[i * n_side + j_lo]
            b = C[i * n_side + j_hi + 1]
            for t in range(a, b):
                idx = O[t]
                d0 = K[idx, 0] - q0
                d1 = K[idx, 1] - q1
                d2 = K[idx, 2] - q2
                if d0 * d0 + d1 * d1 + d2 * d2 <= r2:
                    H[n_hit] = idx
                    n_hit += 1
    return np.sort(hits[:n_hit])
