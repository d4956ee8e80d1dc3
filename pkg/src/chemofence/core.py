"""Geometry, configuration records and the deterministic random streams.

Random numbers come from xoshiro256** (Blackman & Vigna), seeded through
SplitMix64.  Every robot in every repetition owns its own stream; the stream
key is mixed from ``(seed, repetition, stream_id)`` so adding robots never
changes the draws of the others.

Derivations used everywhere (and mirrored by the compiled kernel):

* uniform:  ``(next_u64() >> 11) * 2**-53``  -> [0, 1)
* normal:   Box-Muller, one variate per call, ``u1`` and ``u2`` drawn in
  that order: ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from typing import Any, NamedTuple

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15
TWO_PI = 2.0 * math.pi

# stream ids outside the robot index range
TARGET_STREAM = 1 << 32


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants.

    ``errors`` is a list of ``(field_name, message)`` pairs, one per violation.
    """

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = list(errors)
        msg = "; ".join(f"{name}: {text}" for name, text in self.errors)
        super().__init__(msg)


class Vec2(NamedTuple):
    x: float
    y: float

    def __add__(self, other):  # type: ignore[override]
        return Vec2(self.x + other[0], self.y + other[1])

    def __sub__(self, other):
        return Vec2(self.x - other[0], self.y - other[1])

    def scale(self, k: float) -> Vec2:
        return Vec2(self.x * k, self.y * k)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y)

    def dist(self, other) -> float:
        dx = self.x - other[0]
        dy = self.y - other[1]
        return math.sqrt(dx * dx + dy * dy)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y)


# --------------------------------------------------------------------------
# random streams


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step. Returns ``(new_state, output)``."""
    state = (state + GOLDEN64) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def stream_key(seed: int, rep: int, stream_id: int) -> int:
    """Mix ``(seed, rep, stream_id)`` into one 64-bit stream key."""
    _, h = splitmix64(seed & MASK64)
    _, h = splitmix64(h ^ (rep & MASK64))
    _, h = splitmix64(h ^ (stream_id & MASK64))
    return h


def seed_state(key: int) -> tuple[int, int, int, int]:
    """Expand a 64-bit key into a xoshiro256** state with SplitMix64."""
    s = key & MASK64
    out = []
    for _ in range(4):
        s, z = splitmix64(s)
        out.append(z)
    return tuple(out)  # type: ignore[return-value]


class RngStream:
    """Single-owner xoshiro256** stream.

    >>> a, b = RngStream.for_robot(7, 0, 3), RngStream.for_robot(7, 0, 3)
    >>> a.uniform() == b.uniform()
    True
    """

    __slots__ = ("s",)

    def __init__(self, key: int = 0, *, state: tuple[int, int, int, int] | None = None):
        self.s = list(state) if state is not None else list(seed_state(key))
        if not any(self.s):
            raise ValueError("xoshiro256** state must not be all zero")

    @classmethod
    def for_robot(cls, seed: int, rep: int, robot: int) -> RngStream:
        return cls(stream_key(seed, rep, robot))

    @classmethod
    def for_stream(cls, seed: int, rep: int, stream_id: int) -> RngStream:
        return cls(stream_key(seed, rep, stream_id))

    def state(self) -> tuple[int, int, int, int]:
        return tuple(self.s)  # type: ignore[return-value]

    def copy(self) -> RngStream:
        return RngStream(state=self.state())

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def standard_normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(TWO_PI * u2)


def normal(rng: RngStream, mean: float, std: float) -> float:
    """Draw from N(mean, std) via the fixed Box-Muller transform.

    ``std == 0`` returns ``mean`` exactly but still consumes two uniforms, so
    the stream position does not depend on the parameters.
    """
    if std < 0:
        raise ValueError("std must be non-negative")
    z = rng.standard_normal()
    if std == 0:
        return float(mean)
    return mean + std * z


# --------------------------------------------------------------------------
# configuration


class Mode(str, Enum):
    CHEMOTAXIS = "chemotaxis"
    BOUNDED = "bounded"
    UNBOUNDED = "unbounded"


def _num(v):
    # arena sizes are stored as floats so the canonical JSON form is stable
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    return v


def _vec(p) -> Vec2:
    return Vec2(_num(p[0]), _num(p[1]))


@dataclass(frozen=True)
class ArenaSpec:
    """Circle (``radius``) or rectangle (``width`` x ``height``) centred on ``origin``."""

    shape: str = "circle"
    radius: float | None = 14.0
    width: float | None = None
    height: float | None = None
    origin: Vec2 = Vec2(0.0, 0.0)
    walled: bool = False

    @classmethod
    def circle(cls, radius: float, origin=(0.0, 0.0), walled: bool = False) -> ArenaSpec:
        return cls("circle", _num(radius), None, None, _vec(origin), walled)

    @classmethod
    def rectangle(cls, width: float, height: float, origin=(0.0, 0.0), walled: bool = False) -> ArenaSpec:
        return cls("rectangle", None, _num(width), _num(height), _vec(origin), walled)

    def errors(self) -> list[tuple[str, str]]:
        errs = []
        if self.shape == "circle":
            if self.radius is None or not self.radius > 0:
                errs.append(("arena.radius", "must be > 0"))
            if self.width is not None or self.height is not None:
                errs.append(("arena.shape", "circle takes only a radius"))
        elif self.shape == "rectangle":
            for name in ("width", "height"):
                v = getattr(self, name)
                if v is None or not v > 0:
                    errs.append((f"arena.{name}", "must be > 0"))
            if self.radius is not None:
                errs.append(("arena.shape", "rectangle takes width and height, not radius"))
        else:
            errs.append(("arena.shape", f"unknown shape {self.shape!r}"))
        if not Vec2(*self.origin).is_finite():
            errs.append(("arena.origin", "must be finite"))
        return errs

    @property
    def corner(self) -> Vec2:
        """Lower-left corner of a rectangle (or of a circle's bounding box)."""
        if self.shape == "circle":
            return Vec2(self.origin[0] - self.radius, self.origin[1] - self.radius)
        return Vec2(self.origin[0] - self.width / 2, self.origin[1] - self.height / 2)

    def contains(self, p, tol: float = 1e-9) -> bool:
        ox, oy = self.origin
        if self.shape == "circle":
            return math.hypot(p[0] - ox, p[1] - oy) <= self.radius + tol
        return (abs(p[0] - ox) <= self.width / 2 + tol
                and abs(p[1] - oy) <= self.height / 2 + tol)

    def inner_radius(self) -> float:
        """Radius of the largest disc centred on ``origin`` that fits inside."""
        if self.shape == "circle":
            return self.radius
        return min(self.width, self.height) / 2

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"shape": self.shape}
        if self.shape == "circle":
            d["radius"] = self.radius
        else:
            d["width"] = self.width
            d["height"] = self.height
        d["origin"] = [self.origin[0], self.origin[1]]
        d["walled"] = self.walled
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ArenaSpec:
        allowed = {"shape", "radius", "width", "height", "origin", "walled"}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ConfigError([(f"arena.{k}", "unknown key") for k in unknown])
        origin = d.get("origin", [0.0, 0.0])
        arena = cls(
            shape=d.get("shape", "circle"),
            radius=_num(d.get("radius")),
            width=_num(d.get("width")),
            height=_num(d.get("height")),
            origin=_vec(origin),
            walled=bool(d.get("walled", False)),
        )
        errs = arena.errors()
        if errs:
            raise ConfigError(errs)
        return arena


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.025
    v_r: float = 0.605
    P_b: float = 0.0025
    M: float = 10.0
    D: float = 1000.0
    d_c: float = 10.0
    n: int = 40
    sense_period: float = 1.0
    v_n: float = 0.0
    d_n: float = 0.1
    t_max: float = 1500.0
    swarm_size: int = 10
    robot_radius: float = 0.175
    mode: Mode = Mode.CHEMOTAXIS
    seed: int = 0
    repetitions: int = 30
    # not named in the model description; conventions of this simulator
    n_targets: int = 0
    spawn_radius: float = 2.0
    turn_rate: float = 0.0  # rad/s; 0 = the whole turn happens in one step

    @property
    def steps_per_sense(self) -> int:
        return int(round(self.sense_period / self.dt))

    @property
    def n_ticks(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def chemotaxis(self) -> bool:
        return Mode(self.mode) is Mode.CHEMOTAXIS

    def replace(self, **changes) -> SimConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["mode"] = Mode(self.mode).value
        return d


def _is_multiple(value: float, step: float) -> bool:
    k = round(value / step)
    return k >= 1 and abs(k * step - value) <= 1e-9 * max(1.0, abs(value))


def config_errors(cfg: SimConfig) -> list[tuple[str, str]]:
    errs: list[tuple[str, str]] = []

    def bad(name, text):
        errs.append((name, text))

    for name in ("dt", "v_r", "P_b", "M", "D", "d_c", "sense_period", "v_n", "d_n",
                 "t_max", "robot_radius", "spawn_radius", "turn_rate"):
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            bad(name, "must be a finite number")
    for name in ("n", "swarm_size", "seed", "repetitions", "n_targets"):
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, int):
            bad(name, "must be an integer")
    if errs:
        return errs

    if not cfg.dt > 0:
        bad("dt", "must be > 0")
    if not cfg.v_r > 0:
        bad("v_r", "must be > 0")
    if not 0 < cfg.P_b <= 1:
        bad("P_b", "must lie in (0, 1]")
    if not cfg.M >= 1:
        bad("M", "must be >= 1")
    if not cfg.D >= 1:
        bad("D", "must be >= 1")
    if cfg.P_b * cfg.M > 1:
        bad("M", f"P_b*M = {cfg.P_b * cfg.M:g} exceeds 1")
    if not cfg.d_c > 0:
        bad("d_c", "must be > 0")
    if cfg.n < 1:
        bad("n", "must be >= 1")
    if cfg.v_n < 0:
        bad("v_n", "must be >= 0")
    if cfg.d_n < 0:
        bad("d_n", "must be >= 0")
    if cfg.swarm_size < 1:
        bad("swarm_size", "must be >= 1")
    if cfg.repetitions < 1:
        bad("repetitions", "must be >= 1")
    if cfg.n_targets < 0:
        bad("n_targets", "must be >= 0")
    if cfg.robot_radius < 0:
        bad("robot_radius", "must be >= 0")
    if cfg.spawn_radius < 0:
        bad("spawn_radius", "must be >= 0")
    if cfg.turn_rate < 0:
        bad("turn_rate", "must be >= 0 (0 means instant)")
    if not 0 <= cfg.seed <= MASK64:
        bad("seed", "must fit in an unsigned 64-bit integer")
    if cfg.dt > 0 and cfg.sense_period > 0 and not _is_multiple(cfg.sense_period, cfg.dt):
        bad("sense_period", f"{cfg.sense_period} is not an integer multiple of dt={cfg.dt}")
    elif not cfg.sense_period > 0:
        bad("sense_period", "must be > 0")
    if cfg.dt > 0 and cfg.t_max > 0 and not _is_multiple(cfg.t_max, cfg.dt):
        bad("t_max", f"{cfg.t_max} is not an integer multiple of dt={cfg.dt}")
    elif not cfg.t_max > 0:
        bad("t_max", "must be > 0")
    try:
        Mode(cfg.mode)
    except ValueError:
        bad("mode", f"unknown mode {cfg.mode!r}")
    return errs


def validate_config(raw: SimConfig, arena: ArenaSpec | None = None) -> SimConfig:
    """Check every invariant and return a normalized config.

    All violations are collected and raised together as :class:`ConfigError`.
    """
    errs = config_errors(raw)
    if arena is not None:
        errs += arena.errors()
        if not errs and Mode(raw.mode) is Mode.BOUNDED and not arena.walled:
            errs.append(("mode", "bounded mode needs a walled arena"))
    if errs:
        raise ConfigError(errs)
    return replace(raw, mode=Mode(raw.mode), M=float(raw.M), D=float(raw.D))


# --------------------------------------------------------------------------
# config files

_SIM_KEYS = tuple(f.name for f in fields(SimConfig))


def config_from_dict(d: dict[str, Any]) -> tuple[SimConfig, ArenaSpec, dict[str, Any] | None, dict[str, Any] | None]:
    """Parse a config document into ``(config, arena, mission, signal)``.

    Top-level keys are the :class:`SimConfig` fields plus ``arena``,
    ``mission`` and ``signal``; anything else is an error.
    """
    allowed = set(_SIM_KEYS) | {"arena", "mission", "signal"}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError([(k, "unknown key") for k in unknown])
    kwargs = {k: d[k] for k in _SIM_KEYS if k in d}
    if "mode" in kwargs:
        try:
            kwargs["mode"] = Mode(kwargs["mode"])
        except ValueError:
            raise ConfigError([("mode", f"unknown mode {kwargs['mode']!r}")]) from None
    for k in ("dt", "v_r", "P_b", "M", "D", "d_c", "sense_period", "v_n", "d_n",
              "t_max", "robot_radius", "spawn_radius", "turn_rate"):
        if k in kwargs and isinstance(kwargs[k], int) and not isinstance(kwargs[k], bool):
            kwargs[k] = float(kwargs[k])
    arena = ArenaSpec.from_dict(d["arena"]) if "arena" in d else ArenaSpec()
    cfg = validate_config(SimConfig(**kwargs), arena)
    return cfg, arena, d.get("mission"), d.get("signal")


def config_to_dict(cfg: SimConfig, arena: ArenaSpec, mission: dict | None = None,
                   signal: dict | None = None) -> dict[str, Any]:
    d = cfg.to_dict()
    d["arena"] = arena.to_dict()
    if mission is not None:
        d["mission"] = dict(mission)
    if signal is not None:
        d["signal"] = dict(signal)
    return d


def dumps_config(cfg: SimConfig, arena: ArenaSpec, mission: dict | None = None,
                 signal: dict | None = None) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(config_to_dict(cfg, arena, mission, signal), sort_keys=True, indent=2) + "\n"


def loads_config(text: str):
    return config_from_dict(json.loads(text))


def load_config(path):
    with open(path) as fh:
        return loads_config(fh.read())
