"""The nest (guide robot): a signal source that may follow checkpoints."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .core import ArenaSpec, Vec2

ARRIVE_TOL = 0.5
LANE_SPACING = 25.0


class MissionError(ValueError):
    pass


@dataclass(frozen=True)
class SweepPlan:
    """Ordered checkpoints for the nest.

    The nest starts on ``checkpoints[0]``.  With ``cycle`` it loops back to
    the first checkpoint after the last one; otherwise it stops at the last.
    A single checkpoint is a stationary nest.
    """

    checkpoints: tuple[Vec2, ...]
    cycle: bool = False
    phases: tuple[str, ...] = ()
    arena: ArenaSpec | None = None
    lane_spacing: float | None = None

    @property
    def start(self) -> Vec2:
        return self.checkpoints[0]

    @property
    def moving(self) -> bool:
        return len(self.checkpoints) > 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "x", "y", "phase"])
            phases = self.phases or ("",) * len(self.checkpoints)
            for i, (p, ph) in enumerate(zip(self.checkpoints, phases)):
                w.writerow([i, repr(p.x), repr(p.y), ph])


def stationary(at=(0.0, 0.0)) -> SweepPlan:
    return SweepPlan((Vec2(*at),))


def straight_mission(start, length: float) -> SweepPlan:
    """Drive ``length`` metres along +x from ``start`` and stop there."""
    if not length > 0:
        raise MissionError("straight mission length must be > 0")
    s = Vec2(*start)
    return SweepPlan((s, Vec2(s.x + length, s.y)), cycle=False, phases=("start", "end"))


def _lanes(extent: float, spacing: float) -> list[float]:
    out = []
    k = 0
    while k * spacing < extent - 1e-9 * extent:
        out.append(k * spacing)
        k += 1
    out.append(extent)
    return out


def plan_sweep(arena: ArenaSpec, lane_spacing: float = LANE_SPACING) -> SweepPlan:
    """Serpentine sweep: vertical lanes, then horizontal lanes, repeated.

    Columns sit at ``0, s, 2s, ...`` from the left edge plus one on the right
    edge; the horizontal phase starts from the corner where the vertical phase
    ended.  Checkpoints are absolute coordinates.
    """
    if arena.shape != "rectangle":
        raise MissionError("sweeps need a rectangular arena")
    W, H = arena.width, arena.height
    if not 0 < lane_spacing <= min(W, H):
        raise MissionError("lane spacing must be in (0, min(width, height)]")
    cx, cy = arena.corner

    pts: list[tuple[float, float, str]] = []
    xs = _lanes(W, lane_spacing)
    for i, x in enumerate(xs):
        ends = (0.0, H) if i % 2 == 0 else (H, 0.0)
        pts += [(x, ends[0], "vertical"), (x, ends[1], "vertical")]

    end_x, end_y = pts[-1][0], pts[-1][1]
    ys = _lanes(H, lane_spacing)
    if end_y == H:
        ys = [H - y for y in ys]
    for i, y in enumerate(ys):
        ends = (end_x, W - end_x) if i % 2 == 0 else (W - end_x, end_x)
        pts += [(ends[0], y, "horizontal"), (ends[1], y, "horizontal")]

    cps: list[Vec2] = []
    phases: list[str] = []
    for x, y, ph in pts:
        p = Vec2(cx + x, cy + y)
        if cps and p == cps[-1]:
            continue
        cps.append(p)
        phases.append(ph)
    if len(cps) > 1 and cps[-1] == cps[0]:
        cps.pop()
        phases.pop()
    return SweepPlan(tuple(cps), cycle=True, phases=tuple(phases), arena=arena,
                     lane_spacing=lane_spacing)


def mission_from_dict(d: dict | None, arena: ArenaSpec) -> SweepPlan:
    """Build a plan from a config ``mission`` entry.

    ``{"kind": "stationary"}`` (default, nest at the arena origin),
    ``{"kind": "straight", "length": 100, "start": [x, y]}`` or
    ``{"kind": "sweep", "lane_spacing": 25}``.
    """
    d = dict(d or {})
    kind = d.pop("kind", "stationary")
    if kind == "stationary":
        at = d.pop("at", arena.origin)
        plan = stationary(at)
    elif kind == "straight":
        plan = straight_mission(d.pop("start", arena.origin), float(d.pop("length", 100.0)))
    elif kind == "sweep":
        plan = plan_sweep(arena, float(d.pop("lane_spacing", LANE_SPACING)))
    else:
        raise MissionError(f"unknown mission kind {kind!r}")
    if d:
        raise MissionError(f"unknown mission keys: {sorted(d)}")
    return plan


@dataclass
class NestState:
    x: float
    y: float
    heading: float
    target: int | None  # index of the checkpoint being driven to
    waiting: bool = False
    distance_travelled: float = 0.0

    @property
    def pos(self) -> Vec2:
        return Vec2(self.x, self.y)

    @classmethod
    def start(cls, plan: SweepPlan, v_n: float) -> NestState:
        s = plan.start
        if v_n > 0 and not plan.moving:
            raise MissionError("a moving nest (v_n > 0) needs at least two checkpoints")
        if not plan.moving or v_n == 0:
            return cls(s.x, s.y, 0.0, None)
        nxt = plan.checkpoints[1]
        return cls(s.x, s.y, math.atan2(nxt.y - s.y, nxt.x - s.x), 1)

    def copy(self) -> NestState:
        return NestState(self.x, self.y, self.heading, self.target, self.waiting,
                         self.distance_travelled)


def front_blocked(nest: NestState, robot_positions, d_n: float) -> bool:
    """True if any robot centre is within ``d_n`` and not behind the nest."""
    c, s = math.cos(nest.heading), math.sin(nest.heading)
    for p in robot_positions:
        dx = p[0] - nest.x
        dy = p[1] - nest.y
        if dx * dx + dy * dy <= d_n * d_n and dx * c + dy * s >= 0.0:
            return True
    return False


def nest_step(nest: NestState, plan: SweepPlan, robot_positions, v_n: float, v_r: float,
              dt: float, d_n: float, arrive_tol: float = ARRIVE_TOL) -> NestState:
    """Advance the nest by one tick (in place).

    A nest with no target left, or with ``v_n == 0``, holds position.  A robot
    in the front half-disc of radius ``d_n`` makes it wait this tick.
    Otherwise it moves ``v_n * v_r * dt`` toward its checkpoint (never past it)
    and switches to the next checkpoint once within ``arrive_tol``.
    """
    if nest.target is None or v_n == 0:
        nest.waiting = False
        return nest
    if front_blocked(nest, robot_positions, d_n):
        nest.waiting = True
        return nest
    nest.waiting = False
    tgt = plan.checkpoints[nest.target]
    vx, vy = tgt.x - nest.x, tgt.y - nest.y
    dist = math.sqrt(vx * vx + vy * vy)
    step = v_n * v_r * dt
    if dist <= step:
        nest.x, nest.y = tgt.x, tgt.y
        moved = dist
    else:
        nest.x += vx / dist * step
        nest.y += vy / dist * step
        moved = step
    nest.distance_travelled += moved
    vx, vy = tgt.x - nest.x, tgt.y - nest.y
    nxt = nest.target + 1
    if nxt >= len(plan.checkpoints):
        nxt = 0 if plan.cycle else None
    # a final checkpoint is reached exactly, intermediate ones within arrive_tol
    tol = arrive_tol if nxt is not None else 0.0
    if math.sqrt(vx * vx + vy * vy) <= tol:
        nest.target = nxt
        if nxt is not None:
            t2 = plan.checkpoints[nxt]
            nest.heading = math.atan2(t2.y - nest.y, t2.x - nest.x)
    elif moved > 0:
        nest.heading = math.atan2(vy, vx)
    return nest
