"""Reward terms for the planar biped, plus the weighted aggregator.

Every term is a pure function of plain scalars/arrays so each one can be
checked against an independent scalar oracle. Tracking terms live in (0, 1];
penalty terms are >= 0 and enter the total with negative weights.
"""

import math
from dataclasses import dataclass, field

import numpy as np

TERM_NAMES = ("lv", "av", "bm", "bo", "bh", "air", "f", "fs",
              "tau", "acc", "a", "s", "jp", "k")


@dataclass
class GaitParams:
    """Footswing heuristic constants (not given by the source method; tuned)."""

    period: float = 0.8          # full gait cycle, seconds
    t_stance: float = 0.4        # stance time used by the Raibert rule
    k_raibert: float = 0.03      # feedback gain on velocity error
    z_max: float = 0.12          # swing apex height, meters
    kappa: float = 0.04          # von Mises concentration for the height bump


@dataclass
class RewardWeights:
    """Per-term combination weights and the term constants."""

    sigma_xy: float = 0.2
    sigma_omega: float = 0.2
    base_height_floor: float = 1.0   # h_l; desk profile overrides per robot
    f_max: float = 600.0
    joint_alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    weights: dict = field(default_factory=dict)
    gait: GaitParams = field(default_factory=GaitParams)

    DEFAULT_WEIGHTS = {
        "lv": 1.0, "av": 0.5,
        "bm": -0.2, "bo": -1.0, "bh": -10.0, "air": -0.5, "f": -0.002,
        "fs": -2.0, "tau": -2e-5, "acc": -2e-7, "a": -0.02, "s": -0.02,
        "jp": -0.5, "k": -10.0,
    }

    def __post_init__(self):
        merged = dict(self.DEFAULT_WEIGHTS)
        merged.update(self.weights)
        self.weights = merged
        self.joint_alpha = np.asarray(self.joint_alpha, dtype=np.float64)
        assert self.sigma_xy > 0 and self.sigma_omega > 0
        assert self.gait.kappa > 0


# ---------------------------------------------------------------------------
# individual terms

def r_lv(v_xy, cmd_xy, sigma_xy=0.2):
    """Linear-velocity tracking: exp(-||v - v*||^2 / sigma)."""
    err = np.subtract(v_xy, cmd_xy)
    return math.exp(-float(np.dot(err, err)) / sigma_xy)


def r_av(omega_z, cmd_omega_z, sigma_omega=0.2):
    """Angular-velocity tracking: exp(-(w - w*)^2 / sigma)."""
    d = omega_z - cmd_omega_z
    return math.exp(-(d * d) / sigma_omega)


def r_bm(v_z, omega_xy):
    """Base motion penalty: v_z^2 + 0.5 ||omega_roll_pitch||^2."""
    o = np.asarray(omega_xy, dtype=np.float64)
    return v_z * v_z + 0.5 * float(np.dot(o, o))


def r_bo(g_xy):
    """Base orientation penalty: squared horizontal projected gravity."""
    g = np.asarray(g_xy, dtype=np.float64)
    return float(np.dot(g, g))


def r_bh(h, h_floor):
    """One-sided base-height penalty below the floor h_l."""
    return (h_floor - h) ** 2 if h < h_floor else 0.0


def r_air(contact_forces):
    """1 iff no foot carries a positive contact force."""
    forces = np.asarray(contact_forces, dtype=np.float64)
    loaded = sum(1 for f in forces if np.linalg.norm(f) > 0.0)
    return 1.0 if loaded == 0 else 0.0


def r_f(contact_forces, f_max):
    """Per-foot excess of the contact-force magnitude over f_max."""
    total = 0.0
    for f in np.asarray(contact_forces, dtype=np.float64):
        mag = float(np.linalg.norm(f))
        if mag > f_max:
            total += mag - f_max
    return total


def swing_progress(phase, foot_index):
    """Fraction through the swing window, or -1.0 while in stance.

    Foot 0 (left) swings during phase in [0.5, 1); foot 1 mirrors it.
    """
    p = (phase + 0.5 * foot_index) % 1.0
    return (p - 0.5) / 0.5 if p >= 0.5 else -1.0


def swing_height(s, gait):
    """Normalized von Mises bump over swing progress s in [0, 1], apex z_max."""
    if s < 0.0:
        return 0.0
    theta = 2.0 * math.pi * s - math.pi
    k = gait.kappa
    lo = math.exp(-k)
    bump = (math.exp(k * math.cos(theta)) - lo) / (math.exp(k) - lo)
    return gait.z_max * bump


def foot_targets(phase, hip_x, v_x, cmd_vx, gait):
    """Heuristic targets (x*, z*) per foot.

    x* follows the Raibert rule below the hip; z* is the von Mises swing bump
    (exactly zero through stance, so a planted foot has z* = 0).
    """
    hip_x = np.asarray(hip_x, dtype=np.float64)
    x_star = hip_x + 0.5 * gait.t_stance * v_x + gait.k_raibert * (v_x - cmd_vx)
    z_star = np.array([swing_height(swing_progress(phase, i), gait)
                       for i in range(len(hip_x))])
    return x_star, z_star


def r_fs(foot_x, foot_z, x_star, z_star, z_weight=5.0):
    """Footswing tracking: sum ||x - x*||^2 + 5.0 sum (z - z*)^2."""
    fx = np.asarray(foot_x, dtype=np.float64)
    fz = np.asarray(foot_z, dtype=np.float64)
    return float(np.sum((fx - x_star) ** 2) + z_weight * np.sum((fz - z_star) ** 2))


def r_tau(tau):
    t = np.asarray(tau, dtype=np.float64)
    return float(np.dot(t, t))


def r_acc(qacc):
    a = np.asarray(qacc, dtype=np.float64)
    return float(np.dot(a, a))


def r_a(action, prev_action):
    d = np.subtract(action, prev_action)
    return float(np.dot(d, d))


def r_s(targets_t, targets_tm1, targets_tm2):
    """Joint-target smoothing: first plus second difference, both squared."""
    q0 = np.asarray(targets_t, dtype=np.float64)
    q1 = np.asarray(targets_tm1, dtype=np.float64)
    q2 = np.asarray(targets_tm2, dtype=np.float64)
    d1 = q0 - q1
    d2 = q0 - 2.0 * q1 + q2
    return float(np.dot(d1, d1) + np.dot(d2, d2))


def r_jp(q, q_neutral, alpha):
    """Weighted deviation from the neutral pose for selected joints."""
    dq = np.subtract(q, q_neutral)
    return float(np.sum(np.asarray(alpha, dtype=np.float64) * dq * dq))


def r_k(terminal_collision):
    return 1.0 if terminal_collision else 0.0


# ---------------------------------------------------------------------------
# aggregation

@dataclass
class RewardInputs:
    """Planar quantities one control step produces for the reward suite."""

    v_xy: np.ndarray            # realized (forward, lateral) base velocity
    cmd_v_xy: np.ndarray
    omega_z: float              # realized turn rate (0 in the planar robot)
    cmd_omega_z: float
    v_z: float
    omega_xy: np.ndarray        # (roll, pitch) rates
    g_xy: np.ndarray            # horizontal projected gravity
    base_height: float
    contact_forces: np.ndarray  # [n_feet, 2]
    foot_x: np.ndarray
    foot_z: np.ndarray
    hip_x: np.ndarray
    phase: float
    joint_q: np.ndarray
    joint_q_neutral: np.ndarray
    tau: np.ndarray
    qacc: np.ndarray
    action: np.ndarray
    prev_action: np.ndarray
    pd_targets: np.ndarray
    pd_targets_tm1: np.ndarray
    pd_targets_tm2: np.ndarray
    terminal_collision: bool


@dataclass
class RewardBreakdown:
    raw: dict
    weighted: dict
    total: float


def total_reward(inputs, rw):
    """Evaluate all 14 terms and combine them with the configured weights."""
    x_star, z_star = foot_targets(inputs.phase, inputs.hip_x,
                                  float(inputs.v_xy[0]), float(inputs.cmd_v_xy[0]),
                                  rw.gait)
    raw = {
        "lv": r_lv(inputs.v_xy, inputs.cmd_v_xy, rw.sigma_xy),
        "av": r_av(inputs.omega_z, inputs.cmd_omega_z, rw.sigma_omega),
        "bm": r_bm(inputs.v_z, inputs.omega_xy),
        "bo": r_bo(inputs.g_xy),
        "bh": r_bh(inputs.base_height, rw.base_height_floor),
        "air": r_air(inputs.contact_forces),
        "f": r_f(inputs.contact_forces, rw.f_max),
        "fs": r_fs(inputs.foot_x, inputs.foot_z, x_star, z_star),
        "tau": r_tau(inputs.tau),
        "acc": r_acc(inputs.qacc),
        "a": r_a(inputs.action, inputs.prev_action),
        "s": r_s(inputs.pd_targets, inputs.pd_targets_tm1, inputs.pd_targets_tm2),
        "jp": r_jp(inputs.joint_q, inputs.joint_q_neutral, rw.joint_alpha),
        "k": r_k(inputs.terminal_collision),
    }
    weighted = {name: rw.weights[name] * raw[name] for name in TERM_NAMES}
    return RewardBreakdown(raw=raw, weighted=weighted,
                           total=float(sum(weighted.values())))
