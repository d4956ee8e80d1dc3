"""Compiled tick loop.

Mirrors ``controller``, ``nest`` and ``sim.tick`` operation for operation,
including the order of random draws, so both engines produce the same
trajectories.  Everything is flat arrays so numba can compile it.
"""
import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi
DEG2RAD = math.pi / 180.0
INV_2_53 = 1.0 / 9007199254740992.0

# float parameter slots
P_DT, P_VR, P_PB, P_M, P_D, P_THR, P_A0, P_ALPHA, P_AE, P_SIGMA, P_VN, P_DN, \
    P_ARRIVE, P_RADIUS, P_TURNRATE, P_OX, P_OY, P_AR, P_HW, P_HH = range(20)
N_FPARAMS = 20
# integer parameter slots
I_SPS, I_CHEMO, I_WALLED, I_SHAPE, I_CYCLE = range(5)
N_IPARAMS = 5
# nest float / int slots
N_X, N_Y, N_HEAD, N_DIST = range(4)
N_TARGET, N_WAIT = range(2)
# target grid slots
G_X0, G_Y0, G_CELL = range(3)


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def next_u64(s):
    s0 = s[0]
    s1 = s[1]
    s2 = s[2]
    s3 = s[3]
    result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    s[0] = s0
    s[1] = s1
    s[2] = s2
    s[3] = s3
    return result


@njit(cache=True)
def uniform(s):
    return float(next_u64(s) >> np.uint64(11)) * INV_2_53


@njit(cache=True)
def standard_normal(s):
    u1 = uniform(s)
    u2 = uniform(s)
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(TWO_PI * u2)


@njit(cache=True)
def fill_uniform(s, out):
    for i in range(out.shape[0]):
        out[i] = uniform(s)


@njit(cache=True)
def fill_normal(s, out):
    for i in range(out.shape[0]):
        out[i] = standard_normal(s)


@njit(cache=True)
def _rotate(heading, turn_left, max_turn):
    if max_turn <= 0.0 or abs(turn_left) <= max_turn:
        heading += turn_left
        turn_left = 0.0
    else:
        step = max_turn if turn_left > 0.0 else -max_turn
        heading += step
        turn_left = turn_left - step
    return heading % TWO_PI, turn_left


@njit(cache=True)
def _nest_step(fp, ip, nest_f, nest_i, checkpoints, pos):
    target = nest_i[N_TARGET]
    v_n = fp[P_VN]
    if target < 0 or v_n == 0.0:
        nest_i[N_WAIT] = 0
        return
    nx = nest_f[N_X]
    ny = nest_f[N_Y]
    c = math.cos(nest_f[N_HEAD])
    s = math.sin(nest_f[N_HEAD])
    d_n = fp[P_DN]
    for i in range(pos.shape[0]):
        dx = pos[i, 0] - nx
        dy = pos[i, 1] - ny
        if dx * dx + dy * dy <= d_n * d_n and dx * c + dy * s >= 0.0:
            nest_i[N_WAIT] = 1
            return
    nest_i[N_WAIT] = 0
    tx = checkpoints[target, 0]
    ty = checkpoints[target, 1]
    vx = tx - nx
    vy = ty - ny
    dist = math.sqrt(vx * vx + vy * vy)
    step = v_n * fp[P_VR] * fp[P_DT]
    if dist <= step:
        nx = tx
        ny = ty
        moved = dist
    else:
        nx += vx / dist * step
        ny += vy / dist * step
        moved = step
    nest_f[N_X] = nx
    nest_f[N_Y] = ny
    nest_f[N_DIST] += moved
    vx = tx - nx
    vy = ty - ny
    nxt = target + 1
    if nxt >= checkpoints.shape[0]:
        nxt = 0 if ip[I_CYCLE] else -1
    tol = fp[P_ARRIVE] if nxt >= 0 else 0.0
    if math.sqrt(vx * vx + vy * vy) <= tol:
        nest_i[N_TARGET] = nxt
        if nxt >= 0:
            nest_f[N_HEAD] = math.atan2(checkpoints[nxt, 1] - ny, checkpoints[nxt, 0] - nx)
    elif moved > 0.0:
        nest_f[N_HEAD] = math.atan2(vy, vx)


@njit(cache=True)
def advance(n_ticks, clock, fp, ip,
            pos, heading, fbuf, fcount, fidx, ftotal, a_prev, a_curr, p_t, samples,
            turn_left, turns, rng,
            nest_f, nest_i, checkpoints,
            targets, alive, found, grid_f, grid_shape, cell_start, cell_items,
            sample_every, out_dist, out_found, out_nest):
    """Run ``n_ticks`` ticks from ``clock``; record metrics every ``sample_every`` ticks.

    Returns the new clock.  ``found`` is a length-1 counter.
    """
    n_robots = pos.shape[0]
    n = fbuf.shape[1]
    sps = ip[I_SPS]
    chemo = ip[I_CHEMO] != 0
    walled = ip[I_WALLED] != 0
    circle = ip[I_SHAPE] == 0
    dt = fp[P_DT]
    step_len = fp[P_VR] * dt
    max_turn = fp[P_TURNRATE] * dt
    A0 = fp[P_A0]
    alpha = fp[P_ALPHA]
    Ae = fp[P_AE]
    sigma = fp[P_SIGMA]
    thr = fp[P_THR]
    P_b = fp[P_PB]
    M = fp[P_M]
    D = fp[P_D]
    ox = fp[P_OX]
    oy = fp[P_OY]
    radius = fp[P_RADIUS]
    r2 = radius * radius
    n_targets = targets.shape[0]
    gx0 = grid_f[G_X0]
    gy0 = grid_f[G_Y0]
    cell = grid_f[G_CELL]
    ncx = grid_shape[0]
    ncy = grid_shape[1]

    for _ in range(n_ticks):
        _nest_step(fp, ip, nest_f, nest_i, checkpoints, pos)
        nx = nest_f[N_X]
        ny = nest_f[N_Y]
        for i in range(n_robots):
            s = rng[i]
            # sense
            dx = pos[i, 0] - nx
            dy = pos[i, 1] - ny
            d = math.sqrt(dx * dx + dy * dy)
            a = A0 * math.exp(-alpha * d) + Ae
            z = standard_normal(s)
            x = a * (1.0 - sigma * z)
            k = fidx[i]
            if fcount[i] == n:
                ftotal[i] -= fbuf[i, k]
            else:
                fcount[i] += 1
            fbuf[i, k] = x
            ftotal[i] += x
            fidx[i] = (k + 1) % n
            samples[i] += 1
            if samples[i] % sps == 0:
                a_prev[i] = a_curr[i]
                a_curr[i] = ftotal[i] / fcount[i]
                if chemo:
                    pt = P_b
                    if a_curr[i] < thr:
                        if a_curr[i] < a_prev[i]:
                            pt = P_b * M
                        elif a_curr[i] > a_prev[i]:
                            pt = P_b / D
                    p_t[i] = pt
                else:
                    p_t[i] = P_b
            # move
            if turn_left[i] != 0.0:
                heading[i], turn_left[i] = _rotate(heading[i], turn_left[i], max_turn)
                continue
            if uniform(s) < p_t[i]:
                sign = 1.0 if uniform(s) < 0.5 else -1.0
                mag = abs(180.0 + 90.0 * standard_normal(s))
                turn_left[i] = sign * (mag * DEG2RAD)
                turns[i] += 1
                heading[i], turn_left[i] = _rotate(heading[i], turn_left[i], max_turn)
                continue
            px = pos[i, 0] + step_len * math.cos(heading[i])
            py = pos[i, 1] + step_len * math.sin(heading[i])
            if walled:
                if circle:
                    vx = px - ox
                    vy = py - oy
                    r = math.sqrt(vx * vx + vy * vy)
                    R = fp[P_AR]
                    if r > R:
                        px = ox + vx * (R / r)
                        py = oy + vy * (R / r)
                        inward = math.atan2(-vy, -vx)
                        heading[i] = (inward + (uniform(s) - 0.5) * math.pi) % TWO_PI
                else:
                    hw = fp[P_HW]
                    hh = fp[P_HH]
                    nxv = 0.0
                    nyv = 0.0
                    if px > ox + hw:
                        px = ox + hw
                        nxv = -1.0
                    elif px < ox - hw:
                        px = ox - hw
                        nxv = 1.0
                    if py > oy + hh:
                        py = oy + hh
                        nyv = -1.0
                    elif py < oy - hh:
                        py = oy - hh
                        nyv = 1.0
                    if nxv != 0.0 or nyv != 0.0:
                        inward = math.atan2(nyv, nxv)
                        heading[i] = (inward + (uniform(s) - 0.5) * math.pi) % TWO_PI
            pos[i, 0] = px
            pos[i, 1] = py

        # target detection
        if n_targets > 0 and found[0] < n_targets:
            for i in range(n_robots):
                cx = int(math.floor((pos[i, 0] - gx0) / cell))
                cy = int(math.floor((pos[i, 1] - gy0) / cell))
                for gx in range(cx - 1, cx + 2):
                    if gx < 0 or gx >= ncx:
                        continue
                    for gy in range(cy - 1, cy + 2):
                        if gy < 0 or gy >= ncy:
                            continue
                        c = gx * ncy + gy
                        for m in range(cell_start[c], cell_start[c + 1]):
                            t = cell_items[m]
                            if alive[t]:
                                ddx = pos[i, 0] - targets[t, 0]
                                ddy = pos[i, 1] - targets[t, 1]
                                if ddx * ddx + ddy * ddy < r2:
                                    alive[t] = False
                                    found[0] += 1

        clock += 1
        if sample_every > 0 and clock % sample_every == 0:
            j = clock // sample_every
            nx = nest_f[N_X]
            ny = nest_f[N_Y]
            for i in range(n_robots):
                dx = pos[i, 0] - nx
                dy = pos[i, 1] - ny
                out_dist[j, i] = math.sqrt(dx * dx + dy * dy)
            out_found[j] = found[0]
            out_nest[j, 0] = nx
            out_nest[j, 1] = ny
    return clock
