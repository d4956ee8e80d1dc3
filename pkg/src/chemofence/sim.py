"""World state, the tick loop and per-run metrics.

Two engines step the same world.  ``tick`` is the readable reference built
from the controller and nest functions; ``run`` packs the world into arrays
and hands it to the compiled kernel in ``_kernel``.  They agree bit for bit
(see tests/test_sim.py).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel as K
from .controller import Behaviour, RobotState, motion_step, sense_step
from .core import (TARGET_STREAM, TWO_PI, ArenaSpec, ConfigError, Mode, RngStream,
                   SimConfig, Vec2, validate_config)
from .nest import ARRIVE_TOL, NestState, SweepPlan, nest_step, stationary
from .signal import FilterWindow, SignalModel

METRIC_PERIOD = 1.0  # seconds of simulated time between metric samples
DEFAULT_RADII = (6, 8, 10, 12, 14, 16, 18, 20, 22)


@dataclass
class World:
    config: SimConfig
    arena: ArenaSpec
    signal: SignalModel
    plan: SweepPlan
    nest: NestState
    robots: list[RobotState]
    targets: np.ndarray  # (T, 2)
    alive: np.ndarray  # (T,) bool
    behaviour: Behaviour
    arrive_tol: float = ARRIVE_TOL
    clock: int = 0
    found: int = 0

    @property
    def t(self) -> float:
        return self.clock * self.config.dt

    def positions(self) -> np.ndarray:
        return np.array([[r.x, r.y] for r in self.robots])

    def nest_distances(self) -> np.ndarray:
        p = self.positions()
        dx = p[:, 0] - self.nest.x
        dy = p[:, 1] - self.nest.y
        return np.sqrt(dx * dx + dy * dy)  # same expression as the kernel, not hypot

    def copy(self) -> World:
        return World(self.config, self.arena, self.signal, self.plan, self.nest.copy(),
                     [r.copy() for r in self.robots], self.targets.copy(), self.alive.copy(),
                     self.behaviour, self.arrive_tol, self.clock, self.found)


def spawn(config: SimConfig, arena: ArenaSpec, seed: int | None = None, rep: int = 0,
          plan: SweepPlan | None = None, signal: SignalModel | None = None,
          arrive_tol: float = ARRIVE_TOL) -> World:
    """Initial world for one repetition.

    The nest starts on the plan's first checkpoint (the arena origin when no
    plan is given).  Robot ``i`` draws its spawn point (uniform over a disc of
    ``spawn_radius`` around the nest) and heading from its own stream, then
    keeps using that stream.  Targets are uniform over the arena and come from
    a separate stream.
    """
    cfg = validate_config(config, arena)
    seed = cfg.seed if seed is None else seed
    signal = signal or SignalModel()
    plan = plan or stationary(arena.origin)
    if arena.inner_radius() < cfg.spawn_radius:
        raise ConfigError([("arena", f"too small for a spawn disc of radius {cfg.spawn_radius}")])
    nest = NestState.start(plan, cfg.v_n)
    if arena.walled and not arena.contains(nest.pos, tol=-cfg.spawn_radius):
        raise ConfigError([("arena", "spawn disc around the nest leaves the walled arena")])
    beh = Behaviour.from_config(cfg, signal)

    robots = []
    for i in range(cfg.swarm_size):
        rng = RngStream.for_robot(seed, rep, i)
        r = cfg.spawn_radius * math.sqrt(rng.uniform())
        th = TWO_PI * rng.uniform()
        heading = TWO_PI * rng.uniform()
        robots.append(RobotState(nest.x + r * math.cos(th), nest.y + r * math.sin(th), heading,
                                 FilterWindow(cfg.n), rng, P_t=cfg.P_b))

    trng = RngStream.for_stream(seed, rep, TARGET_STREAM)
    targets = np.empty((cfg.n_targets, 2))
    ox, oy = arena.origin
    for k in range(cfg.n_targets):
        u1, u2 = trng.uniform(), trng.uniform()
        if arena.shape == "circle":
            r = arena.radius * math.sqrt(u1)
            targets[k] = (ox + r * math.cos(TWO_PI * u2), oy + r * math.sin(TWO_PI * u2))
        else:
            targets[k] = (ox + (u1 - 0.5) * arena.width, oy + (u2 - 0.5) * arena.height)
    return World(cfg, arena, signal, plan, nest, robots, targets,
                 np.ones(cfg.n_targets, dtype=bool), beh, arrive_tol)


def apply_wall(robot: RobotState, arena: ArenaSpec) -> None:
    """Clamp a robot that left a walled arena and point it back inside.

    The new heading is uniform over the open half-plane facing into the
    arena at the contact point.
    """
    ox, oy = arena.origin
    if arena.shape == "circle":
        vx, vy = robot.x - ox, robot.y - oy
        r = math.sqrt(vx * vx + vy * vy)
        R = arena.radius
        if r > R:
            robot.x = ox + vx * (R / r)
            robot.y = oy + vy * (R / r)
            inward = math.atan2(-vy, -vx)
            robot.heading = (inward + (robot.rng.uniform() - 0.5) * math.pi) % TWO_PI
        return
    hw, hh = arena.width / 2, arena.height / 2
    nx = ny = 0.0
    if robot.x > ox + hw:
        robot.x, nx = ox + hw, -1.0
    elif robot.x < ox - hw:
        robot.x, nx = ox - hw, 1.0
    if robot.y > oy + hh:
        robot.y, ny = oy + hh, -1.0
    elif robot.y < oy - hh:
        robot.y, ny = oy - hh, 1.0
    if nx != 0.0 or ny != 0.0:
        inward = math.atan2(ny, nx)
        robot.heading = (inward + (robot.rng.uniform() - 0.5) * math.pi) % TWO_PI


def tick(world: World) -> World:
    """One time step, in place: nest, robots (sense, move, wall), targets."""
    cfg = world.config
    if world.clock >= cfg.n_ticks:
        raise RuntimeError("world already reached t_max")
    nest_step(world.nest, world.plan, [(r.x, r.y) for r in world.robots], cfg.v_n, cfg.v_r,
              cfg.dt, cfg.d_n, world.arrive_tol)
    nest_pos = (world.nest.x, world.nest.y)
    for r in world.robots:
        sense_step(r, world.signal, nest_pos, world.behaviour)
        motion_step(r, world.behaviour)
        if world.arena.walled and r.moved:
            apply_wall(r, world.arena)
    if world.found < len(world.targets):
        r2 = cfg.robot_radius ** 2
        for r in world.robots:
            for k in np.flatnonzero(world.alive):
                dx = r.x - world.targets[k, 0]
                dy = r.y - world.targets[k, 1]
                if dx * dx + dy * dy < r2:
                    world.alive[k] = False
                    world.found += 1
    world.clock += 1
    return world


def robots_within(world: World, d_r: float) -> int:
    """Robots whose centre is at most ``d_r`` from the nest."""
    if d_r < 0:
        raise ValueError("d_r must be non-negative")
    return int(np.count_nonzero(world.nest_distances() <= d_r))


# --------------------------------------------------------------------------
# metrics


@dataclass
class RunMetrics:
    """Samples taken once per simulated second, starting at t = 0."""

    times: np.ndarray
    dist: np.ndarray  # (S, robots) distance of each robot to the nest
    found: np.ndarray  # (S,) cumulative targets found
    nest: np.ndarray  # (S, 2)
    n_targets: int
    seed: int
    rep: int
    meta: dict = field(default_factory=dict)

    def within(self, d_r: float) -> np.ndarray:
        return np.count_nonzero(self.dist <= d_r, axis=1)

    def time_avg_within(self, d_r: float, window: float | None = 500.0) -> float:
        """Mean count within ``d_r`` over samples with ``t > t_end - window``.

        ``window=None`` averages over every sample after t = 0.
        """
        t_end = self.times[-1]
        lo = 0.0 if window is None else t_end - window
        sel = self.times > lo
        return float(self.within(d_r)[sel].mean())

    def endpoint_within(self, d_r: float) -> int:
        return int(self.within(d_r)[-1])

    def found_at(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t - 1e-9))
        if k >= len(self.times) or abs(self.times[k] - t) > 1e-9:
            raise KeyError(f"no metric sample at t={t}")
        return int(self.found[k])

    def rows(self, radii=DEFAULT_RADII):
        counts = [self.within(r) for r in radii]
        for k, t in enumerate(self.times):
            yield [self.rep, _fmt(t), int(self.found[k])] + [int(c[k]) for c in counts]

    def header(self, radii=DEFAULT_RADII) -> list[str]:
        return ["rep", "t", "targets_found"] + [f"within_{_fmt(r)}" for r in radii]

    def to_csv(self, fh, radii=DEFAULT_RADII, header: bool = True) -> None:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(self.header(radii))
        w.writerows(self.rows(radii))

    def csv_text(self, radii=DEFAULT_RADII) -> str:
        buf = io.StringIO()
        self.to_csv(buf, radii)
        return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:g}" if float(x).is_integer() else repr(float(x))


# --------------------------------------------------------------------------
# compiled engine


def _target_grid(targets: np.ndarray, cell: float):
    if len(targets) == 0:
        return (np.zeros(3), np.zeros(2, dtype=np.int64), np.zeros(1, dtype=np.int64),
                np.zeros(0, dtype=np.int64))
    x0 = targets[:, 0].min() - cell
    y0 = targets[:, 1].min() - cell
    ncx = int((targets[:, 0].max() - x0) // cell) + 2
    ncy = int((targets[:, 1].max() - y0) // cell) + 2
    cx = np.floor((targets[:, 0] - x0) / cell).astype(np.int64)
    cy = np.floor((targets[:, 1] - y0) / cell).astype(np.int64)
    cid = cx * ncy + cy
    order = np.argsort(cid, kind="stable")
    counts = np.bincount(cid, minlength=ncx * ncy)
    start = np.zeros(ncx * ncy + 1, dtype=np.int64)
    np.cumsum(counts, out=start[1:])
    return (np.array([x0, y0, cell]), np.array([ncx, ncy], dtype=np.int64), start,
            order.astype(np.int64))


class _Packed:
    """Array view of a world, in the layout the kernel expects."""

    def __init__(self, w: World):
        cfg, beh, sig, ar = w.config, w.behaviour, w.signal, w.arena
        fp = np.zeros(K.N_FPARAMS)
        fp[K.P_DT], fp[K.P_VR], fp[K.P_PB] = cfg.dt, cfg.v_r, cfg.P_b
        fp[K.P_M], fp[K.P_D], fp[K.P_THR] = beh.M, beh.D, beh.threshold
        fp[K.P_A0], fp[K.P_ALPHA], fp[K.P_AE], fp[K.P_SIGMA] = sig.A0, sig.alpha, sig.Ae, sig.sigma_rel
        fp[K.P_VN], fp[K.P_DN], fp[K.P_ARRIVE] = cfg.v_n, cfg.d_n, w.arrive_tol
        fp[K.P_RADIUS], fp[K.P_TURNRATE] = cfg.robot_radius, cfg.turn_rate
        fp[K.P_OX], fp[K.P_OY] = ar.origin
        if ar.shape == "circle":
            fp[K.P_AR] = ar.radius
        else:
            fp[K.P_HW], fp[K.P_HH] = ar.width / 2, ar.height / 2
        ip = np.zeros(K.N_IPARAMS, dtype=np.int64)
        ip[K.I_SPS] = beh.steps_per_sense
        ip[K.I_CHEMO] = int(beh.chemotaxis)
        ip[K.I_WALLED] = int(ar.walled)
        ip[K.I_SHAPE] = 0 if ar.shape == "circle" else 1
        ip[K.I_CYCLE] = int(w.plan.cycle)
        self.fp, self.ip = fp, ip

        rs = w.robots
        self.pos = np.array([[r.x, r.y] for r in rs], dtype=float)
        self.heading = np.array([r.heading for r in rs], dtype=float)
        self.fbuf = np.array([r.filter.buf for r in rs], dtype=float).reshape(len(rs), cfg.n)
        self.fcount = np.array([r.filter.count for r in rs], dtype=np.int64)
        self.fidx = np.array([r.filter.idx for r in rs], dtype=np.int64)
        self.ftotal = np.array([r.filter.total for r in rs], dtype=float)
        self.a_prev = np.array([r.A_prev for r in rs], dtype=float)
        self.a_curr = np.array([r.A_curr for r in rs], dtype=float)
        self.p_t = np.array([r.P_t for r in rs], dtype=float)
        self.samples = np.array([r.samples for r in rs], dtype=np.int64)
        self.turn_left = np.array([r.turn_left for r in rs], dtype=float)
        self.turns = np.array([r.turns for r in rs], dtype=np.int64)
        self.rng = np.array([r.rng.state() for r in rs], dtype=np.uint64)

        n = w.nest
        self.nest_f = np.array([n.x, n.y, n.heading, n.distance_travelled])
        self.nest_i = np.array([-1 if n.target is None else n.target, int(n.waiting)], dtype=np.int64)
        self.checkpoints = np.array(w.plan.checkpoints, dtype=float).reshape(-1, 2)

        self.targets = np.ascontiguousarray(w.targets, dtype=float).reshape(-1, 2)
        self.alive = w.alive.copy()
        self.found = np.array([w.found], dtype=np.int64)
        cell = max(cfg.robot_radius, 1.0)
        self.grid_f, self.grid_shape, self.cell_start, self.cell_items = _target_grid(self.targets, cell)
        self.clock = w.clock

    def advance(self, n_ticks: int, sample_every: int = 0, out_dist=None, out_found=None,
                out_nest=None) -> None:
        if out_dist is None:
            out_dist = np.zeros((1, self.pos.shape[0]))
            out_found = np.zeros(1, dtype=np.int64)
            out_nest = np.zeros((1, 2))
        self.clock = K.advance(
            n_ticks, self.clock, self.fp, self.ip,
            self.pos, self.heading, self.fbuf, self.fcount, self.fidx, self.ftotal,
            self.a_prev, self.a_curr, self.p_t, self.samples, self.turn_left, self.turns,
            self.rng, self.nest_f, self.nest_i, self.checkpoints,
            self.targets, self.alive, self.found, self.grid_f, self.grid_shape,
            self.cell_start, self.cell_items, sample_every, out_dist, out_found, out_nest)

    def store(self, w: World) -> World:
        """Copy the array state back into ``w``."""
        for i, r in enumerate(w.robots):
            r.x, r.y = float(self.pos[i, 0]), float(self.pos[i, 1])
            r.heading = float(self.heading[i])
            r.filter.buf = [float(v) for v in self.fbuf[i]]
            r.filter.count, r.filter.idx = int(self.fcount[i]), int(self.fidx[i])
            r.filter.total = float(self.ftotal[i])
            r.A_prev, r.A_curr, r.P_t = float(self.a_prev[i]), float(self.a_curr[i]), float(self.p_t[i])
            r.samples, r.turn_left, r.turns = int(self.samples[i]), float(self.turn_left[i]), int(self.turns[i])
            r.rng.s = [int(v) for v in self.rng[i]]
        n = w.nest
        n.x, n.y, n.heading, n.distance_travelled = (float(v) for v in self.nest_f)
        n.target = None if self.nest_i[0] < 0 else int(self.nest_i[0])
        n.waiting = bool(self.nest_i[1])
        w.alive[:] = self.alive
        w.found = int(self.found[0])
        w.clock = self.clock
        return w


def advance(world: World, n_ticks: int) -> World:
    """Step ``world`` by ``n_ticks`` with the compiled engine (in place)."""
    if world.clock + n_ticks > world.config.n_ticks:
        raise RuntimeError("cannot run past t_max")
    p = _Packed(world)
    p.advance(n_ticks)
    return p.store(world)


def _ticks_per(period: float, dt: float) -> int:
    k = int(round(period / dt))
    if k < 1 or abs(k * dt - period) > 1e-9 * period:
        raise ConfigError([("dt", f"must divide the metric period {period} s")])
    return k


TRACE_HEADER = ["t", "robot_id", "x", "y", "A_curr", "P_t"]


def run(config: SimConfig, arena: ArenaSpec, mission: SweepPlan | None = None,
        seed: int | None = None, rep: int = 0, signal: SignalModel | None = None,
        trace=None, trace_every: int = 1, arrive_tol: float = ARRIVE_TOL,
        engine: str = "fast") -> RunMetrics:
    """Simulate one repetition up to ``t_max`` and return its metrics.

    ``trace`` (a writable text file) receives ``t,robot_id,x,y,A_curr,P_t``
    rows every ``trace_every`` ticks.  ``engine="reference"`` steps with the
    pure-Python :func:`tick` instead of the compiled kernel.
    """
    world = spawn(config, arena, seed, rep, mission, signal, arrive_tol)
    cfg = world.config
    every = _ticks_per(METRIC_PERIOD, cfg.dt)
    total = cfg.n_ticks
    S = total // every + 1
    N = cfg.swarm_size
    dist = np.zeros((S, N))
    found = np.zeros(S, dtype=np.int64)
    nest_xy = np.zeros((S, 2))
    dist[0] = world.nest_distances()
    nest_xy[0] = world.nest.pos
    writer = None
    if trace is not None:
        writer = csv.writer(trace, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        _write_trace(writer, world)

    if engine == "reference":
        while world.clock < total:
            tick(world)
            if writer is not None and world.clock % trace_every == 0:
                _write_trace(writer, world)
            if world.clock % every == 0:
                j = world.clock // every
                dist[j] = world.nest_distances()
                found[j] = world.found
                nest_xy[j] = world.nest.pos
    elif engine == "fast":
        p = _Packed(world)
        if writer is None:
            p.advance(total, every, dist, found, nest_xy)
        else:
            while p.clock < total:
                p.advance(min(trace_every, total - p.clock), every, dist, found, nest_xy)
                p.store(world)
                _write_trace(writer, world)
        p.store(world)
    else:
        raise ValueError(f"unknown engine {engine!r}")

    times = np.arange(S) * METRIC_PERIOD
    meta = {
        "mode": Mode(cfg.mode).value,
        "ticks": world.clock,
        "turns": [r.turns for r in world.robots],
        "nest_distance_travelled": world.nest.distance_travelled,
    }
    return RunMetrics(times, dist, found, nest_xy, cfg.n_targets,
                      cfg.seed if seed is None else seed, rep, meta)


def _write_trace(writer, world: World) -> None:
    t = _fmt(world.clock * world.config.dt)
    for i, r in enumerate(world.robots):
        writer.writerow([t, i, repr(r.x), repr(r.y), repr(r.A_curr), repr(r.P_t)])
