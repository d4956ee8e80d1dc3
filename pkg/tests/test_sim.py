import io
import math

import numpy as np
import pytest
from scipy import stats

from chemofence.core import ArenaSpec, ConfigError, Mode, SimConfig
from chemofence.nest import plan_sweep, straight_mission
from chemofence.sim import advance, robots_within, run, spawn, tick

STEP = 0.605 * 0.025

CASES = {
    "chemotaxis": (SimConfig(t_max=60, d_c=3, M=10), ArenaSpec.circle(50), None),
    "bounded_circle": (SimConfig(t_max=60, mode=Mode.BOUNDED, n_targets=60, robot_radius=0.4),
                       ArenaSpec.circle(3, walled=True), None),
    "bounded_rect": (SimConfig(t_max=60, mode=Mode.BOUNDED, n_targets=30),
                     ArenaSpec.rectangle(6, 5, (1, 2), walled=True), None),
    "sweep": (SimConfig(t_max=60, v_n=1.0, d_c=4, M=6, d_n=1.0, n_targets=50),
              ArenaSpec.rectangle(20, 20), "sweep"),
    "straight_turn_rate": (SimConfig(t_max=40, v_n=0.5, turn_rate=3.0, P_b=0.02, M=5),
                           ArenaSpec.circle(50), "straight"),
}


def case(name):
    cfg, arena, mission = CASES[name]
    plan = None
    if mission == "sweep":
        plan = plan_sweep(arena, 5)
    elif mission == "straight":
        plan = straight_mission((0.0, 0.0), 10)
    return cfg, arena, plan


@pytest.mark.parametrize("name", sorted(CASES))
def test_engines_bit_identical(name):
    cfg, arena, plan = case(name)
    a = run(cfg, arena, plan, seed=12, rep=3, engine="reference")
    b = run(cfg, arena, plan, seed=12, rep=3, engine="fast")
    assert np.array_equal(a.dist, b.dist)
    assert np.array_equal(a.found, b.found)
    assert np.array_equal(a.nest, b.nest)
    assert a.meta == b.meta


@pytest.mark.parametrize("name", sorted(CASES))
def test_world_state_identical(name):
    cfg, arena, plan = case(name)
    w1 = spawn(cfg, arena, 5, 0, plan)
    w2 = w1.copy()
    for _ in range(777):
        tick(w1)
    advance(w2, 777)
    assert w1.clock == w2.clock and w1.found == w2.found
    assert np.array_equal(w1.alive, w2.alive)
    assert (w1.nest.x, w1.nest.y, w1.nest.target) == (w2.nest.x, w2.nest.y, w2.nest.target)
    for r1, r2 in zip(w1.robots, w2.robots):
        assert (r1.x, r1.y, r1.heading, r1.P_t, r1.turns) == (r2.x, r2.y, r2.heading, r2.P_t, r2.turns)
        assert r1.A_curr == r2.A_curr or (math.isnan(r1.A_curr) and math.isnan(r2.A_curr))
        assert r1.rng.state() == r2.rng.state()
        assert r1.filter.samples() == r2.filter.samples()


def test_spawn_rules():
    w = spawn(SimConfig(), ArenaSpec.circle(50), seed=1)
    pos = w.positions()
    assert len(pos) == 10 and len({tuple(p) for p in pos}) == 10
    assert np.all(w.nest_distances() <= 2.0)
    assert len({r.heading for r in w.robots}) == 10
    w2 = spawn(SimConfig(), ArenaSpec.circle(50), seed=1)
    assert np.array_equal(pos, w2.positions())
    w3 = spawn(SimConfig(), ArenaSpec.circle(50), seed=2)
    assert not np.array_equal(pos, w3.positions())


def test_adding_robots_keeps_streams():
    small = spawn(SimConfig(swarm_size=3), ArenaSpec.circle(50), seed=4)
    big = spawn(SimConfig(swarm_size=8), ArenaSpec.circle(50), seed=4)
    assert np.array_equal(small.positions(), big.positions()[:3])


def test_arena_too_small():
    with pytest.raises(ConfigError):
        spawn(SimConfig(), ArenaSpec.circle(1.5), seed=0)
    with pytest.raises(ConfigError):
        spawn(SimConfig(mode=Mode.BOUNDED), ArenaSpec.circle(1.9, walled=True), seed=0)


def test_targets_uniform_rectangle():
    counts = np.zeros((10, 10))
    cfg = SimConfig(n_targets=100)
    arena = ArenaSpec.rectangle(100, 100)
    for rep in range(40):
        t = spawn(cfg, arena, seed=9, rep=rep).targets
        h, _, _ = np.histogram2d(t[:, 0], t[:, 1], bins=10, range=[[-50, 50], [-50, 50]])
        counts += h
    assert counts.sum() == 4000
    assert stats.chisquare(counts.ravel()).pvalue > 0.01


def test_targets_uniform_disc():
    cfg = SimConfig(n_targets=100)
    arena = ArenaSpec.circle(14)
    r = np.concatenate([np.hypot(*spawn(cfg, arena, seed=1, rep=k).targets.T) for k in range(20)])
    assert r.max() <= 14
    # area-uniform: (r/R)^2 ~ U(0, 1)
    assert stats.kstest((r / 14) ** 2, "uniform").pvalue > 0.01


def test_tick_invariants_bounded():
    cfg = SimConfig(t_max=200, mode=Mode.BOUNDED, n_targets=80, P_b=0.01, M=1)
    arena = ArenaSpec.circle(4, walled=True)
    w = spawn(cfg, arena, seed=3)
    prev_alive = w.alive.copy()
    prev = w.positions()
    while w.clock < cfg.n_ticks:
        tick(w)
        pos = w.positions()
        assert np.all(np.hypot(pos[:, 0], pos[:, 1]) <= 4 + 1e-9)
        assert np.all(np.hypot(*(pos - prev).T) <= STEP + 1e-12)
        assert w.found + int(w.alive.sum()) == 80
        assert not np.any(w.alive & ~prev_alive)
        prev, prev_alive = pos, w.alive.copy()
    assert w.found > 0


def test_unbounded_leaves_arena():
    cfg = SimConfig(t_max=200, mode=Mode.UNBOUNDED)
    m = run(cfg, ArenaSpec.circle(3), seed=0)
    assert m.dist.max() > 3


def test_no_teleport_chemotaxis():
    cfg = SimConfig(t_max=30, d_c=2)
    w = spawn(cfg, ArenaSpec.circle(50), seed=8)
    prev = w.positions()
    for _ in range(cfg.n_ticks):
        tick(w)
        pos = w.positions()
        assert np.all(np.hypot(*(pos - prev).T) <= STEP + 1e-12)
        prev = pos


def test_tick_past_end_refused():
    w = spawn(SimConfig(t_max=0.05), ArenaSpec.circle(50), seed=0)
    tick(w)
    tick(w)
    with pytest.raises(RuntimeError):
        tick(w)


def test_full_run_length():
    m = run(SimConfig(t_max=1500), ArenaSpec.circle(50), seed=0)
    assert m.meta["ticks"] == 60000
    assert len(m.times) == 1501 and m.times[-1] == 1500


def test_target_detected_within_radius():
    cfg = SimConfig(t_max=1, n_targets=1, swarm_size=1, P_b=1e-9, M=1, D=1)
    w = spawn(cfg, ArenaSpec.circle(50), seed=0)
    r = w.robots[0]
    r.P_t = 0.0
    ahead = 20 * STEP
    # 0.1 m to the side of the straight path
    w.targets[0] = (r.x + ahead * math.cos(r.heading) - 0.1 * math.sin(r.heading),
                    r.y + ahead * math.sin(r.heading) + 0.1 * math.cos(r.heading))
    for _ in range(30):
        tick(w)
    assert w.found == 1 and not w.alive[0]


def test_metrics_monotone_and_bounded():
    cfg = SimConfig(t_max=300, mode=Mode.BOUNDED, n_targets=100)
    m = run(cfg, ArenaSpec.circle(14, walled=True), seed=2)
    assert np.all(np.diff(m.found) >= 0)
    assert m.found[-1] <= 100
    assert m.found_at(300) == m.found[-1]


def test_csv_byte_identical():
    cfg = SimConfig(t_max=100, n_targets=20)
    a = run(cfg, ArenaSpec.circle(14), seed=77).csv_text()
    b = run(cfg, ArenaSpec.circle(14), seed=77).csv_text()
    assert a == b
    assert a.splitlines()[0] == ("rep,t,targets_found,within_6,within_8,within_10,within_12,"
                                 "within_14,within_16,within_18,within_20,within_22")


def test_trace_output():
    buf = io.StringIO()
    cfg = SimConfig(t_max=2, swarm_size=3)
    run(cfg, ArenaSpec.circle(50), seed=1, trace=buf, trace_every=40)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,robot_id,x,y,A_curr,P_t"
    assert len(lines) == 1 + 3 * 3
    ref = io.StringIO()
    run(cfg, ArenaSpec.circle(50), seed=1, trace=ref, trace_every=40, engine="reference")
    assert ref.getvalue() == buf.getvalue()


def test_robots_within():
    w = spawn(SimConfig(), ArenaSpec.circle(50), seed=0)
    assert robots_within(w, 6) == 10
    assert robots_within(w, 0) == 0
    for _ in range(4000):
        tick(w)
        assert robots_within(w, 10) <= robots_within(w, 16)


def test_time_average_window():
    m = run(SimConfig(t_max=600), ArenaSpec.circle(50), seed=0)
    sel = m.times > 100
    assert m.time_avg_within(12) == pytest.approx(m.within(12)[sel].mean())
    assert m.endpoint_within(12) == m.within(12)[-1]
