"""Per-robot chemotaxis behaviour: sense, adapt turn probability, move.

Every tick a robot pushes one noisy reading into its averaging filter.  Once
per sensing period it commits the filtered value (``A_prev <- A_curr``,
``A_curr <- filter``) and recomputes its turn probability from the sign of
the change.  Motion is a run-and-pirouette walk: with probability ``P_t`` the
robot spends the tick turning in place, otherwise it drives straight.

Draw order on a robot's stream, per tick:
  1. two uniforms for the sensor noise (Box-Muller)
  2. one uniform to decide whether to turn
  3. if turning: one uniform for the turn sign, two for the turn magnitude
  4. bounded arenas only, when the wall is hit: one uniform for the new heading
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import TWO_PI, RngStream, SimConfig, Vec2
from .signal import (FilterWindow, SignalModel, attenuated_intensity,
                     filtered_intensity, threshold_for_distance)

TURN_MEAN_DEG = 180.0
TURN_STD_DEG = 90.0
DEG2RAD = math.pi / 180.0


@dataclass(frozen=True)
class Behaviour:
    """Behaviour parameters shared by the whole swarm.

    ``chemotaxis=False`` is the plain random walk used by the bounded and
    unbounded baselines; ``threshold`` is then ignored.
    """

    chemotaxis: bool
    threshold: float
    P_b: float
    M: float
    D: float
    n: int
    steps_per_sense: int
    v_r: float
    dt: float
    turn_rate: float = 0.0

    @classmethod
    def from_config(cls, cfg: SimConfig, model: SignalModel) -> Behaviour:
        thr = threshold_for_distance(model, cfg.d_c)
        if cfg.chemotaxis and not thr > model.Ae:
            raise ValueError("activation threshold must exceed the ambient level")
        return cls(cfg.chemotaxis, thr, cfg.P_b, float(cfg.M), float(cfg.D), cfg.n,
                   cfg.steps_per_sense, cfg.v_r, cfg.dt, cfg.turn_rate)


@dataclass
class RobotState:
    x: float
    y: float
    heading: float
    filter: FilterWindow
    rng: RngStream
    A_prev: float = math.nan
    A_curr: float = math.nan
    P_t: float = 0.0
    samples: int = 0
    turn_left: float = 0.0
    turns: int = 0
    moved: bool = False  # translated during the last motion step

    @property
    def pos(self) -> Vec2:
        return Vec2(self.x, self.y)

    def copy(self) -> RobotState:
        return RobotState(self.x, self.y, self.heading, self.filter.copy(), self.rng.copy(),
                          self.A_prev, self.A_curr, self.P_t, self.samples, self.turn_left,
                          self.turns, self.moved)


def update_turn_probability(A_curr: float, A_prev: float, threshold: float,
                            P_b: float, M: float, D: float) -> float:
    """Turn probability for the next sensing period.

    Below the activation threshold a falling signal multiplies the base
    probability by ``M`` and a rising one divides it by ``D``.  Equal readings,
    or any reading at or above the threshold, keep ``P_b``.  NaN compares
    false, so a robot with no history also keeps ``P_b``.
    """
    P_t = P_b
    if A_curr < threshold:
        if A_curr < A_prev:
            P_t = P_b * M
        elif A_curr > A_prev:
            P_t = P_b / D
    return P_t


def sense_step(robot: RobotState, model: SignalModel, nest_pos, beh: Behaviour) -> RobotState:
    """Push one reading; commit and adapt ``P_t`` at the end of each sensing period."""
    dx = robot.x - nest_pos[0]
    dy = robot.y - nest_pos[1]
    d = math.sqrt(dx * dx + dy * dy)
    a = attenuated_intensity(model, d)
    z = robot.rng.standard_normal()
    robot.filter.push(a * (1.0 - model.sigma_rel * z))
    robot.samples += 1
    if robot.samples % beh.steps_per_sense == 0:
        robot.A_prev = robot.A_curr
        robot.A_curr = filtered_intensity(robot.filter)
        if beh.chemotaxis:
            robot.P_t = update_turn_probability(robot.A_curr, robot.A_prev, beh.threshold,
                                                beh.P_b, beh.M, beh.D)
        else:
            robot.P_t = beh.P_b
    return robot


def _rotate(robot: RobotState, max_turn: float) -> None:
    left = robot.turn_left
    if max_turn <= 0 or abs(left) <= max_turn:
        robot.heading += left
        robot.turn_left = 0.0
    else:
        step = max_turn if left > 0 else -max_turn
        robot.heading += step
        robot.turn_left = left - step
    robot.heading = robot.heading % TWO_PI


def motion_step(robot: RobotState, beh: Behaviour) -> RobotState:
    """Turn in place with probability ``P_t``, otherwise drive one step.

    A turn's magnitude is ``|N(180, 90)|`` degrees with a fair-coin sign.
    With ``turn_rate > 0`` a turn is spread over as many ticks as it takes at
    that angular speed; the robot does not translate or draw until it ends.
    """
    max_turn = beh.turn_rate * beh.dt
    robot.moved = False
    if robot.turn_left != 0.0:
        _rotate(robot, max_turn)
        return robot
    rng = robot.rng
    if rng.uniform() < robot.P_t:
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        mag = abs(TURN_MEAN_DEG + TURN_STD_DEG * rng.standard_normal())
        robot.turn_left = sign * (mag * DEG2RAD)
        robot.turns += 1
        _rotate(robot, max_turn)
    else:
        step = beh.v_r * beh.dt
        robot.x += step * math.cos(robot.heading)
        robot.y += step * math.sin(robot.heading)
        robot.moved = True
    return robot
