"""Domain randomization and command sampling.

One row per randomized quantity: per-episode dynamics parameters, per-step
observation noise, and one-control-step observation/action delays. Ranges
are (lo, hi) bounds for uniform/loguniform rows and (mean, std) for
Gaussian rows.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .schema import NOISE_FIELD_MAP

OPERATORS = ("additive", "scaling")
DISTRIBUTIONS = ("gaussian", "uniform", "loguniform")
SCHEDULES = ("per-episode", "per-step")


@dataclass
class RandRow:
    name: str
    unit: str
    lo: float
    hi: float
    operator: str
    distribution: str
    schedule: str

    def __post_init__(self):
        if self.operator not in OPERATORS or self.distribution not in DISTRIBUTIONS \
                or self.schedule not in SCHEDULES:
            raise ValueError(f"bad row spec for {self.name}")
        if self.distribution == "loguniform" and self.lo <= 0:
            raise ValueError(f"loguniform row {self.name} needs lo > 0")
        if self.distribution != "gaussian" and self.lo > self.hi:
            raise ValueError(f"row {self.name}: lo > hi")

    @property
    def identity_value(self):
        return 1.0 if self.operator == "scaling" else 0.0


def default_rows():
    """The full randomization table (ranges in native units)."""
    rows = [
        # per-step observation noise, (mean, std)
        RandRow("joint_position", "rad", 0.0, 0.175, "additive", "gaussian", "per-step"),
        RandRow("joint_velocity", "rad/s", 0.0, 0.15, "additive", "gaussian", "per-step"),
        RandRow("base_lin_vel", "m/s", 0.0, 0.15, "additive", "gaussian", "per-step"),
        RandRow("base_ang_vel", "rad/s", 0.0, 0.15, "additive", "gaussian", "per-step"),
        RandRow("gravity_projection", "-", 0.0, 0.075, "additive", "gaussian", "per-step"),
        # Bernoulli(p) one-step delays; p drawn per episode
        RandRow("observation_delay", "B(p)xdt", 0.0, 0.2, "additive", "uniform", "per-episode"),
        RandRow("action_delay", "B(p)xdt", 0.0, 0.2, "additive", "uniform", "per-episode"),
        # per-episode dynamics
        RandRow("motor_offset", "rad", 0.0, 0.035, "additive", "uniform", "per-episode"),
        RandRow("motor_strength", "%", 0.85, 1.15, "scaling", "uniform", "per-episode"),
        RandRow("motor_damping", "Nms/rad", 0.3, 4.0, "scaling", "loguniform", "per-episode"),
        RandRow("mass", "kg", 0.5, 1.5, "scaling", "uniform", "per-episode"),
        RandRow("kp_factor", "%", 0.9, 1.1, "scaling", "uniform", "per-episode"),
        RandRow("kd_factor", "%", 0.9, 1.1, "scaling", "uniform", "per-episode"),
        RandRow("gravity", "m/s^2", 0.0, 0.67, "additive", "uniform", "per-episode"),
        RandRow("friction", "-", 0.3, 2.0, "scaling", "uniform", "per-episode"),
        RandRow("restitution", "-", 0.0, 0.4, "additive", "uniform", "per-episode"),
    ]
    return {r.name: r for r in rows}


@dataclass
class RandomizationConfig:
    rows: dict = field(default_factory=default_rows)

    def row(self, name):
        return self.rows[name]

    def null(self):
        """Collapse every range to its identity: randomization disabled."""
        collapsed = {}
        for name, r in self.rows.items():
            if r.distribution == "gaussian":
                collapsed[name] = replace(r, lo=0.0, hi=0.0)
            else:
                v = r.identity_value
                dist = "uniform" if r.distribution == "loguniform" else r.distribution
                collapsed[name] = replace(r, lo=v, hi=v, distribution=dist)
        return RandomizationConfig(rows=collapsed)

    def is_null(self):
        return all(
            (r.distribution == "gaussian" and r.hi == 0.0)
            or (r.lo == r.hi == r.identity_value)
            for r in self.rows.values()
        )


def _draw(row, rng, size=None):
    if row.distribution == "uniform":
        v = rng.uniform(row.lo, row.hi, size=size)
    elif row.distribution == "loguniform":
        v = np.exp(rng.uniform(math.log(row.lo), math.log(row.hi), size=size))
    else:
        raise ValueError("gaussian rows are per-step noise, not sampled here")
    assert np.all((v >= row.lo) & (v <= row.hi + 1e-15)), row.name
    return v


@dataclass
class EnvParams:
    """Per-episode draw of every dynamics row (also fed to the privileged state)."""

    motor_offset: np.ndarray
    motor_strength: np.ndarray
    motor_damping: np.ndarray
    mass_scale: float
    kp_factor: float
    kd_factor: float
    gravity_offset: float
    friction_scale: float
    restitution: float
    obs_delay_p: float
    act_delay_p: float

    def as_vector(self):
        return np.concatenate([
            self.motor_offset, self.motor_strength, self.motor_damping,
            [self.mass_scale, self.kp_factor, self.kd_factor,
             self.gravity_offset, self.friction_scale, self.restitution,
             self.obs_delay_p, self.act_delay_p],
        ])

    @staticmethod
    def vector_dim(n_motors):
        return 3 * n_motors + 8


def nominal_params(n_motors):
    return EnvParams(
        motor_offset=np.zeros(n_motors),
        motor_strength=np.ones(n_motors),
        motor_damping=np.ones(n_motors),
        mass_scale=1.0, kp_factor=1.0, kd_factor=1.0,
        gravity_offset=0.0, friction_scale=1.0, restitution=0.0,
        obs_delay_p=0.0, act_delay_p=0.0,
    )


def sample_episode_params(cfg, rng, n_motors):
    """Draw the per-episode rows; per-motor rows get independent draws."""
    rows = cfg.rows
    return EnvParams(
        motor_offset=_draw(rows["motor_offset"], rng, n_motors),
        motor_strength=_draw(rows["motor_strength"], rng, n_motors),
        motor_damping=_draw(rows["motor_damping"], rng, n_motors),
        mass_scale=float(_draw(rows["mass"], rng)),
        kp_factor=float(_draw(rows["kp_factor"], rng)),
        kd_factor=float(_draw(rows["kd_factor"], rng)),
        gravity_offset=float(_draw(rows["gravity"], rng)),
        friction_scale=float(_draw(rows["friction"], rng)),
        restitution=float(_draw(rows["restitution"], rng)),
        obs_delay_p=float(_draw(rows["observation_delay"], rng)),
        act_delay_p=float(_draw(rows["action_delay"], rng)),
    )


def perturb_observation(obs, obs_schema, cfg, rng):
    """Add zero-mean Gaussian noise to the mapped slices only."""
    out = np.array(obs, dtype=np.float64, copy=True)
    for row_name, field_name in NOISE_FIELD_MAP.items():
        row = cfg.rows[row_name]
        std = row.hi
        if std == 0.0:
            continue
        sl = obs_schema.slices[field_name]
        out[sl] += rng.normal(row.lo, std, size=sl.stop - sl.start)
    return out


class DelayLine:
    """One-control-step Bernoulli(p) delay on a vector value."""

    def __init__(self, p=0.0):
        self.p = p
        self._prev = None

    def reset(self, p):
        self.p = p
        self._prev = None

    def __call__(self, fresh, rng):
        fresh = np.asarray(fresh, dtype=np.float64)
        stale = self._prev
        self._prev = fresh.copy()
        if stale is not None and rng.random() < self.p:
            return stale
        return fresh


# ---------------------------------------------------------------------------
# commands

@dataclass
class CommandChannel:
    lo: float
    hi: float
    cutoff: float
    interval: float

    def __post_init__(self):
        if self.cutoff < 0 or self.interval <= 0:
            raise ValueError("cutoff must be >= 0 and interval > 0")


@dataclass
class CommandConfig:
    forward: CommandChannel = field(
        default_factory=lambda: CommandChannel(-0.3, 1.0, 0.10, 10.0))
    sideway: CommandChannel = field(
        default_factory=lambda: CommandChannel(-0.3, 0.3, 0.10, 10.0))
    turn: CommandChannel = field(
        default_factory=lambda: CommandChannel(-1.0, 1.0, 0.26, 10.0))

    def channels(self):
        return (self.forward, self.sideway, self.turn)


def sample_commands(cfg, rng):
    """Independent uniform draws; magnitudes under the cutoff snap to zero."""
    out = np.zeros(3)
    for i, ch in enumerate(cfg.channels()):
        v = rng.uniform(ch.lo, ch.hi)
        out[i] = 0.0 if abs(v) < ch.cutoff else v
    return out


class CommandSampler:
    """Holds commands constant between fixed resample intervals."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.rng = rng
        self.current = np.zeros(3)
        self._next_resample = 0.0

    def reset(self, t=0.0):
        self.current = sample_commands(self.cfg, self.rng)
        self._next_resample = t + self.cfg.forward.interval
        return self.current

    def at(self, t):
        if t >= self._next_resample:
            self.current = sample_commands(self.cfg, self.rng)
            self._next_resample += self.cfg.forward.interval
        return self.current


def split_rng_streams(seed, n):
    """Independent per-environment generators from one master seed."""
    root = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in root.spawn(n)]
