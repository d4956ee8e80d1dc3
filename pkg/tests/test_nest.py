import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chemofence.core import ArenaSpec, Vec2
from chemofence.nest import (MissionError, NestState, front_blocked, mission_from_dict,
                             nest_step, plan_sweep, stationary, straight_mission)

ARENA = ArenaSpec.rectangle(100, 100)
V_R, DT = 0.605, 0.025


def rel(plan):
    cx, cy = plan.arena.corner
    return [(p.x - cx, p.y - cy) for p in plan.checkpoints]


def test_sweep_hand_enumerated():
    plan = plan_sweep(ARENA, 25)
    assert rel(plan) == [
        (0, 0), (0, 100), (25, 100), (25, 0), (50, 0), (50, 100), (75, 100), (75, 0),
        (100, 0), (100, 100),
        (0, 100), (0, 75), (100, 75), (100, 50), (0, 50), (0, 25), (100, 25), (100, 0),
    ]
    assert plan.phases[:10] == ("vertical",) * 10
    assert plan.phases[10:] == ("horizontal",) * 8
    assert plan.cycle


def test_spacing_equal_to_width():
    plan = plan_sweep(ARENA, 100)
    xs = sorted({x for (x, _), ph in zip(rel(plan), plan.phases) if ph == "vertical"})
    assert xs == [0, 100]


def test_sweep_rejects():
    with pytest.raises(MissionError):
        plan_sweep(ArenaSpec.circle(50), 25)
    with pytest.raises(MissionError):
        plan_sweep(ARENA, 0)
    with pytest.raises(MissionError):
        plan_sweep(ARENA, 150)


def seg_dist(p, a, b):
    a, b, p = np.asarray(a), np.asarray(b), np.asarray(p)
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0, 1)
    return float(np.linalg.norm(p - (a + t * ab)))


@settings(max_examples=30, deadline=None)
@given(w=st.floats(20, 200), h=st.floats(20, 200), frac=st.floats(0.05, 1.0),
       ox=st.floats(-50, 50), oy=st.floats(-50, 50))
def test_sweep_properties(w, h, frac, ox, oy):
    arena = ArenaSpec.rectangle(w, h, (ox, oy))
    s = frac * min(w, h)
    plan = plan_sweep(arena, s)
    cps = plan.checkpoints
    for a, b in zip(cps, cps[1:] + cps[:1]):
        assert a != b
    for p in cps:
        assert arena.contains(p)
    rng = np.random.default_rng(0)
    pts = rng.uniform((ox - w / 2, oy - h / 2), (ox + w / 2, oy + h / 2), size=(40, 2))
    for phase in ("vertical", "horizontal"):
        idx = [i for i, ph in enumerate(plan.phases) if ph == phase]
        if phase == "horizontal":
            # starts where the vertical phase ended; its last lane is the wrap segment
            idx = [idx[0] - 1] + idx + [0]
        segs = [(cps[i], cps[j]) for i, j in zip(idx, idx[1:])]
        for p in pts:
            assert min(seg_dist(p, a, b) for a, b in segs) <= s / 2 + 1e-9


def test_sweep_csv(tmp_path):
    plan = plan_sweep(ARENA, 25)
    path = tmp_path / "plan.csv"
    plan.to_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == len(plan.checkpoints)
    assert (float(rows[0]["x"]), float(rows[0]["y"])) == (-50.0, -50.0)


def test_stationary_never_moves():
    plan = stationary((3.0, 4.0))
    nest = NestState.start(plan, 0.0)
    for _ in range(1000):
        nest_step(nest, plan, [], 0.0, V_R, DT, 0.1)
    assert nest.pos == Vec2(3.0, 4.0) and nest.distance_travelled == 0.0


def test_step_length():
    plan = straight_mission((0.0, 0.0), 100)
    nest = NestState.start(plan, 0.125)
    nest_step(nest, plan, [], 0.125, V_R, DT, 0.1)
    assert nest.x == pytest.approx(0.00189, abs=5e-6)
    assert nest.x == pytest.approx(0.125 * V_R * DT, rel=1e-12)


def test_robot_dead_ahead_waits():
    plan = straight_mission((0.0, 0.0), 100)
    nest = NestState.start(plan, 0.125)
    nest_step(nest, plan, [(0.05, 0.0)], 0.125, V_R, DT, 0.1)
    assert nest.waiting and nest.pos == Vec2(0.0, 0.0)
    # behind the nest does not block
    nest_step(nest, plan, [(-0.05, 0.0)], 0.125, V_R, DT, 0.1)
    assert not nest.waiting and nest.x > 0


@settings(max_examples=200)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(0, 2 * math.pi))
def test_front_half_disc(dx, dy, heading):
    nest = NestState(0.0, 0.0, heading, 1)
    inside = dx * dx + dy * dy <= 0.1 * 0.1 and dx * math.cos(heading) + dy * math.sin(heading) >= 0
    assert front_blocked(nest, [(dx, dy)], 0.1) == inside


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1.0), st.lists(st.tuples(st.floats(-60, 60), st.floats(-60, 60)),
                                      max_size=5), st.integers(1, 400))
def test_speed_bound_and_wait(v_n, robots, steps):
    plan = plan_sweep(ARENA, 25)
    nest = NestState.start(plan, v_n)
    cap = v_n * V_R * DT
    travelled = 0.0
    for _ in range(steps):
        x0, y0, target = nest.x, nest.y, nest.target
        blocked = front_blocked(nest, robots, 0.1)
        nest_step(nest, plan, robots, v_n, V_R, DT, 0.1)
        moved = math.hypot(nest.x - x0, nest.y - y0)
        assert moved <= cap + 1e-12
        if blocked:
            assert moved == 0 and nest.waiting
        elif nest.target == target:
            # not arriving: full step, heading toward the current checkpoint
            assert moved == pytest.approx(cap, rel=1e-9)
            tx, ty = plan.checkpoints[target]
            assert math.atan2(ty - nest.y, tx - nest.x) == pytest.approx(
                math.atan2(math.sin(nest.heading), math.cos(nest.heading)), abs=1e-6)
        assert nest.distance_travelled >= travelled
        travelled = nest.distance_travelled


def test_straight_mission_holds_at_end():
    plan = straight_mission((-50.0, 0.0), 100)
    assert plan.checkpoints[-1] == Vec2(50.0, 0.0)
    v_n = 0.25
    nest = NestState.start(plan, v_n)
    n = math.ceil(100 / (v_n * V_R * DT)) + 2000
    for _ in range(n):
        nest_step(nest, plan, [], v_n, V_R, DT, 0.1)
    assert nest.pos == Vec2(50.0, 0.0)
    assert nest.target is None
    assert nest.distance_travelled == pytest.approx(100.0, rel=1e-9)


def test_straight_mission_rejects_zero():
    with pytest.raises(MissionError):
        straight_mission((0, 0), 0)


def test_moving_nest_needs_route():
    with pytest.raises(MissionError):
        NestState.start(stationary(), 0.1)


def test_mission_from_dict():
    assert mission_from_dict(None, ARENA).checkpoints == (Vec2(0.0, 0.0),)
    assert len(mission_from_dict({"kind": "sweep", "lane_spacing": 50}, ARENA).checkpoints) > 2
    with pytest.raises(MissionError):
        mission_from_dict({"kind": "orbit"}, ARENA)
    with pytest.raises(MissionError):
        mission_from_dict({"kind": "straight", "speed": 2}, ARENA)


def test_sweep_cycles():
    plan = plan_sweep(ArenaSpec.rectangle(10, 10), 5)
    nest = NestState.start(plan, 1.0)
    seen = set()
    for _ in range(20000):
        nest_step(nest, plan, [], 1.0, V_R, DT, 0.1)
        seen.add(nest.target)
    assert seen == set(range(len(plan.checkpoints)))
