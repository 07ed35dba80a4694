"""Compiled event-driven core for one realization.

The kernel keeps a table of predicted collision times in absolute time:
``wall_time[i]`` is particle i's next wall hit and ``pair_time[i]`` the
earliest collision with any partner j > i (Allen-Tildesley bookkeeping).
Between events particles move ballistically, so predictions stay valid
until a participant's velocity changes; only then are the affected table
rows recomputed.  Ties are broken deterministically by scan order:
wall events before pair events, lower particle index first.

Everything here operates on flat float64 arrays; the public API lives in
:mod:`diskmc.dynamics`.
"""

from __future__ import annotations

import numpy as np
from numba import njit

HUGE = 1.0e18

STATUS_OK = 0
STATUS_EVENT_OVERFLOW = 1

WALL_NONE = -1
WALL_LEFT = 0
WALL_RIGHT = 1
WALL_BOTTOM = 2
WALL_TOP = 3


@njit(cache=True)
def _predict_wall(x, y, vx, vy, t_now, lo, hi):
    """Absolute time and wall id of the next wall hit, (HUGE, -1) if none."""
    best = HUGE
    wall = WALL_NONE
    if vx > 0.0:
        t = (hi - x) / vx
        if t < 0.0:
            t = 0.0
        if t < best:
            best = t
            wall = WALL_RIGHT
    elif vx < 0.0:
        t = (x - lo) / (-vx)
        if t < 0.0:
            t = 0.0
        if t < best:
            best = t
            wall = WALL_LEFT
    if vy > 0.0:
        t = (hi - y) / vy
        if t < 0.0:
            t = 0.0
        if t < best:
            best = t
            wall = WALL_TOP
    elif vy < 0.0:
        t = (y - lo) / (-vy)
        if t < 0.0:
            t = 0.0
        if t < best:
            best = t
            wall = WALL_BOTTOM
    if wall == WALL_NONE:
        return HUGE, WALL_NONE
    return t_now + best, wall


@njit(cache=True)
def _predict_pair(r, v, i, j, t_now, four_r2):
    """Absolute collision time of pair (i, j), HUGE if they never touch."""
    dx = r[j, 0] - r[i, 0]
    dy = r[j, 1] - r[i, 1]
    dvx = v[j, 0] - v[i, 0]
    dvy = v[j, 1] - v[i, 1]
    b = dx * dvx + dy * dvy
    if b >= 0.0:  # not approaching
        return HUGE
    dsq = dx * dx + dy * dy
    if dsq < four_r2:  # rounding pushed them into overlap: collide now
        return t_now
    vsq = dvx * dvx + dvy * dvy
    disc = b * b - vsq * (dsq - four_r2)
    if disc < 0.0:
        return HUGE
    tau = -(b + np.sqrt(disc)) / vsq
    if tau < 0.0:
        tau = 0.0
    return t_now + tau


@njit(cache=True)
def _refresh_pair_row(r, v, i, t_now, four_r2, n, pair_time, pair_partner):
    """Recompute pair_time[i] = min over j > i."""
    best = HUGE
    partner = -1
    for j in range(i + 1, n):
        t = _predict_pair(r, v, i, j, t_now, four_r2)
        if t < best:
            best = t
            partner = j
    pair_time[i] = best
    pair_partner[i] = partner


@njit(cache=True)
def _after_velocity_change(r, v, i, t_now, lo, hi, four_r2, n,
                           wall_time, wall_which, pair_time, pair_partner):
    """Repair the prediction tables after particle i changed velocity."""
    wall_time[i], wall_which[i] = _predict_wall(
        r[i, 0], r[i, 1], v[i, 0], v[i, 1], t_now, lo, hi
    )
    _refresh_pair_row(r, v, i, t_now, four_r2, n, pair_time, pair_partner)
    for k in range(i):
        if pair_partner[k] == i:
            _refresh_pair_row(r, v, k, t_now, four_r2, n, pair_time, pair_partner)
        else:
            t = _predict_pair(r, v, k, i, t_now, four_r2)
            if t < pair_time[k]:
                pair_time[k] = t
                pair_partner[k] = i


@njit(cache=True)
def run_kernel(r, v, radius, side, dt, steps, audit_stride, max_events_per_step):
    """Advance ``steps`` sampling steps of size ``dt`` from t = 0.

    ``r`` and ``v`` are modified in place and end at the final sample time.

    Returns ``(occupancy, stats, counts, status)`` where ``occupancy`` has
    shape (steps+1, 9) with the per-cell particle counts at every sample,
    ``stats = [ke_start, ke_end, max_pair_penetration, max_wall_penetration]``
    (penetrations measured at audited samples), ``counts = [wall_events,
    pair_events, max_events_in_one_step]`` and ``status`` is 0 on success or
    1 if one sampling step required more than ``max_events_per_step`` events.
    """
    n = r.shape[0]
    lo = radius
    hi = side - radius
    four_r2 = 4.0 * radius * radius
    inv_cell = 3.0 / side

    occupancy = np.zeros((steps + 1, 9), dtype=np.int8)
    stats = np.zeros(4, dtype=np.float64)
    counts = np.zeros(3, dtype=np.int64)

    ke0 = 0.0
    for i in range(n):
        ke0 += 0.5 * (v[i, 0] * v[i, 0] + v[i, 1] * v[i, 1])
    stats[0] = ke0

    for i in range(n):
        cx = int(r[i, 0] * inv_cell)
        cy = int(r[i, 1] * inv_cell)
        if cx > 2:
            cx = 2
        if cy > 2:
            cy = 2
        occupancy[0, cx + 3 * cy] += 1

    wall_time = np.empty(n, dtype=np.float64)
    wall_which = np.empty(n, dtype=np.int64)
    pair_time = np.full(n, HUGE, dtype=np.float64)
    pair_partner = np.full(n, -1, dtype=np.int64)

    t_now = 0.0
    for i in range(n):
        wall_time[i], wall_which[i] = _predict_wall(
            r[i, 0], r[i, 1], v[i, 0], v[i, 1], t_now, lo, hi
        )
    for i in range(n - 1):
        _refresh_pair_row(r, v, i, t_now, four_r2, n, pair_time, pair_partner)

    max_pen_pair = 0.0
    max_pen_wall = 0.0

    for k in range(1, steps + 1):
        t_target = k * dt
        events_this_step = 0

        while True:
            # Earliest event; scan order fixes tie-breaking deterministically.
            t_evt = HUGE
            evt_i = -1
            is_pair = False
            for i in range(n):
                if wall_time[i] < t_evt:
                    t_evt = wall_time[i]
                    evt_i = i
                    is_pair = False
            for i in range(n - 1):
                if pair_time[i] < t_evt:
                    t_evt = pair_time[i]
                    evt_i = i
                    is_pair = True
            if t_evt > t_target:
                break

            events_this_step += 1
            if events_this_step > max_events_per_step:
                counts[2] = events_this_step
                return occupancy, stats, counts, STATUS_EVENT_OVERFLOW

            dt_evt = t_evt - t_now
            if dt_evt > 0.0:
                for i in range(n):
                    r[i, 0] += v[i, 0] * dt_evt
                    r[i, 1] += v[i, 1] * dt_evt
            t_now = t_evt

            if is_pair:
                j = pair_partner[evt_i]
                i = evt_i
                dx = r[j, 0] - r[i, 0]
                dy = r[j, 1] - r[i, 1]
                dist = np.sqrt(dx * dx + dy * dy)
                nx = dx / dist
                ny = dy / dist
                s = (v[i, 0] - v[j, 0]) * nx + (v[i, 1] - v[j, 1]) * ny
                v[i, 0] -= s * nx
                v[i, 1] -= s * ny
                v[j, 0] += s * nx
                v[j, 1] += s * ny
                counts[1] += 1
                _after_velocity_change(r, v, i, t_now, lo, hi, four_r2, n,
                                       wall_time, wall_which, pair_time, pair_partner)
                _after_velocity_change(r, v, j, t_now, lo, hi, four_r2, n,
                                       wall_time, wall_which, pair_time, pair_partner)
            else:
                i = evt_i
                w = wall_which[i]
                # Snap onto the contact line so containment never erodes.
                if w == WALL_LEFT:
                    r[i, 0] = lo
                    v[i, 0] = -v[i, 0]
                elif w == WALL_RIGHT:
                    r[i, 0] = hi
                    v[i, 0] = -v[i, 0]
                elif w == WALL_BOTTOM:
                    r[i, 1] = lo
                    v[i, 1] = -v[i, 1]
                else:
                    r[i, 1] = hi
                    v[i, 1] = -v[i, 1]
                counts[0] += 1
                _after_velocity_change(r, v, i, t_now, lo, hi, four_r2, n,
                                       wall_time, wall_which, pair_time, pair_partner)

        dt_rest = t_target - t_now
        if dt_rest > 0.0:
            for i in range(n):
                r[i, 0] += v[i, 0] * dt_rest
                r[i, 1] += v[i, 1] * dt_rest
        t_now = t_target

        for i in range(n):
            cx = int(r[i, 0] * inv_cell)
            cy = int(r[i, 1] * inv_cell)
            if cx > 2:
                cx = 2
            if cy > 2:
                cy = 2
            occupancy[k, cx + 3 * cy] += 1

        if events_this_step > counts[2]:
            counts[2] = events_this_step

        if audit_stride > 0 and k % audit_stride == 0:
            two_r = 2.0 * radius
            for i in range(n):
                for j in range(i + 1, n):
                    dx = r[j, 0] - r[i, 0]
                    dy = r[j, 1] - r[i, 1]
                    pen = two_r - np.sqrt(dx * dx + dy * dy)
                    if pen > max_pen_pair:
                        max_pen_pair = pen
                for c in range(2):
                    out_lo = lo - r[i, c]
                    out_hi = r[i, c] - hi
                    if out_lo > max_pen_wall:
                        max_pen_wall = out_lo
                    if out_hi > max_pen_wall:
                        max_pen_wall = out_hi

    ke1 = 0.0
    for i in range(n):
        ke1 += 0.5 * (v[i, 0] * v[i, 0] + v[i, 1] * v[i, 1])
    stats[1] = ke1
    stats[2] = max_pen_pair
    stats[3] = max_pen_wall
    return occupancy, stats, counts, STATUS_OK
