"""Planar biped description and its compilation into kernel-ready arrays.

Topology (per leg, top to bottom): hip (actuated) -> thigh, knee (actuated)
-> shin, optional passive pivot -> tarsus, ankle (actuated, toe-equivalent:
held at its default position with fixed gains) -> foot. A stiff virtual
spring rod spans the passive pivot so the shin-tarsus pair behaves like a
closed chain.

Convention: x forward, z up, angles counterclockwise (positive hip swings
the leg forward). Link frames sit at the proximal joint; links extend along
local -z at zero angles.
"""

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RobotModel:
    # link geometry (meters) and mass properties
    torso_mass: float = 12.0
    torso_inertia: float = 0.35
    torso_com: tuple = (0.0, 0.25)
    thigh_len: float = 0.40
    thigh_mass: float = 2.0
    thigh_inertia: float = 0.03
    shin_len: float = 0.25
    shin_mass: float = 1.0
    shin_inertia: float = 0.006
    tarsus_len: float = 0.15
    tarsus_mass: float = 0.5
    tarsus_inertia: float = 0.004
    foot_mass: float = 0.6
    foot_inertia: float = 0.003
    foot_heel: float = -0.06     # sole extent behind the ankle
    foot_toe: float = 0.09       # and in front of it
    ankle_height: float = 0.05
    passive_segment: bool = True

    # per-joint defaults, order [hip, knee, (tarsus), ankle] per leg
    default_hip: float = -0.2
    default_knee: float = 0.4
    default_ankle: float = -0.2
    hip_limits: tuple = (-1.2, 1.2)
    knee_limits: tuple = (-0.3, 1.8)
    tarsus_limits: tuple = (-0.6, 0.6)
    ankle_limits: tuple = (-1.0, 1.0)

    # motor defaults (policy controls hips and knees; ankles are held)
    kp_hip: float = 120.0
    kp_knee: float = 120.0
    kp_ankle: float = 60.0
    kd_hip: float = 6.0
    kd_knee: float = 6.0
    kd_ankle: float = 3.0
    torque_limit_leg: float = 150.0
    torque_limit_ankle: float = 80.0
    motor_damping: float = 0.2       # viscous, scaled by randomization
    passive_damping: float = 0.05    # small bleed on the passive pivot
    joint_limit_k: float = 400.0
    joint_limit_c: float = 5.0

    # virtual spring rod (anchors in shin / tarsus local frames). With
    # k/c = None the stiffness is auto-sized at simulator construction from
    # the apparent passive-pivot inertia: one correction pass (virtual
    # duration dt, critically damped, omega*dt = spring_omega_dt) then
    # decays rod-length error by roughly an order of magnitude.
    spring_anchor_shin: tuple = (0.05, -0.20)
    spring_anchor_tarsus: tuple = (0.05, -0.05)
    spring_k: float = None
    spring_c: float = None
    spring_omega_dt: float = 3.0
    spring_zeta: float = 1.0

    # contact (per point)
    contact_kn: float = 3.0e4
    contact_cn: float = 600.0
    contact_kt: float = 2.0e4
    contact_ct: float = 300.0
    friction_mu: float = 0.8

    # action mapping from raw policy outputs
    target_scale: float = 0.5
    gain_scale: float = 0.3
    gain_clip: tuple = (0.4, 1.6)

    def __post_init__(self):
        for m in (self.torso_mass, self.thigh_mass, self.shin_mass,
                  self.tarsus_mass, self.foot_mass):
            if m <= 0:
                raise ValueError("masses must be positive")
        if self.spring_k is not None and self.spring_k <= 0:
            raise ValueError("spring stiffness must be positive")

    # joint bookkeeping ----------------------------------------------------
    @property
    def joints_per_leg(self):
        return 4 if self.passive_segment else 3

    @property
    def n_joints(self):
        return 2 * self.joints_per_leg

    @property
    def n_motors(self):
        return 6  # hip, knee, ankle per leg

    @property
    def n_policy_joints(self):
        return 4  # hips and knees

    @property
    def action_dim(self):
        return 3 * self.n_policy_joints  # targets + kp + kd

    @property
    def total_mass(self):
        per_leg = self.thigh_mass + self.shin_mass + self.foot_mass
        if self.passive_segment:
            per_leg += self.tarsus_mass
        return self.torso_mass + 2 * per_leg

    def default_joint_pose(self):
        """All joint angles at the neutral crouch, passive pivots at zero."""
        if self.passive_segment:
            leg = [self.default_hip, self.default_knee, 0.0, self.default_ankle]
        else:
            leg = [self.default_hip, self.default_knee, self.default_ankle]
        return np.array(leg * 2)

    def default_policy_targets(self):
        return np.array([self.default_hip, self.default_knee] * 2)

    def build(self):
        return ModelArrays(self)


class ModelArrays:
    """Flat numeric view of a RobotModel for the simulation kernels.

    Body 0 is the torso (floating base x, z, pitch); every other body hangs
    from a revolute joint. Coordinate of body i (i >= 1) is q[2 + i].
    """

    def __init__(self, rm):
        self.robot = rm
        passive = rm.passive_segment
        shin_total = rm.shin_len if passive else rm.shin_len + rm.tarsus_len

        bodies = [("torso", -1, (0.0, 0.0), rm.torso_mass, rm.torso_inertia,
                   rm.torso_com)]
        self.leg_joint_bodies = []   # per leg: body index per joint
        for leg in range(2):
            base = len(bodies)
            bodies.append(("thigh", 0, (0.0, 0.0), rm.thigh_mass,
                           rm.thigh_inertia, (0.0, -rm.thigh_len / 2)))
            bodies.append(("shin", base, (0.0, -rm.thigh_len), rm.shin_mass,
                           rm.shin_inertia, (0.0, -shin_total / 2)))
            joint_bodies = [base, base + 1]
            if passive:
                bodies.append(("tarsus", base + 1, (0.0, -rm.shin_len),
                               rm.tarsus_mass, rm.tarsus_inertia,
                               (0.0, -rm.tarsus_len / 2)))
                bodies.append(("foot", base + 2, (0.0, -rm.tarsus_len),
                               rm.foot_mass, rm.foot_inertia, (0.015, -0.03)))
                joint_bodies += [base + 2, base + 3]
            else:
                bodies.append(("foot", base + 1, (0.0, -shin_total),
                               rm.foot_mass, rm.foot_inertia, (0.015, -0.03)))
                joint_bodies.append(base + 2)
            self.leg_joint_bodies.append(joint_bodies)

        self.names = [b[0] for b in bodies]
        self.nb = len(bodies)
        self.nq = 2 + self.nb
        self.parent = np.array([b[1] for b in bodies], dtype=np.int64)
        self.jpos = np.array([b[2] for b in bodies])
        self.mass = np.array([b[3] for b in bodies])
        self.inertia = np.array([b[4] for b in bodies])
        self.com = np.array([b[5] for b in bodies])
        self.foot_bodies = np.array([legs[-1] for legs in self.leg_joint_bodies],
                                    dtype=np.int64)
        self.hip_bodies = np.array([legs[0] for legs in self.leg_joint_bodies],
                                   dtype=np.int64)

        # contact points: heel and toe per foot
        con_body, con_local, con_foot = [], [], []
        for f, fb in enumerate(self.foot_bodies):
            for off in (rm.foot_heel, rm.foot_toe):
                con_body.append(fb)
                con_local.append((off, -rm.ankle_height))
                con_foot.append(f)
        self.con_body = np.array(con_body, dtype=np.int64)
        self.con_local = np.array(con_local)
        self.con_foot = np.array(con_foot, dtype=np.int64)
        self.n_contacts = len(con_body)

        # motors: [hipL, kneeL, ankleL, hipR, kneeR, ankleR]
        motor_bodies = []
        for legs in self.leg_joint_bodies:
            motor_bodies += [legs[0], legs[1], legs[-1]]
        self.motor_coord = np.array([2 + b for b in motor_bodies], dtype=np.int64)
        self.policy_motor_idx = np.array([0, 1, 3, 4], dtype=np.int64)
        self.fixed_motor_idx = np.array([2, 5], dtype=np.int64)
        self.motor_kp = np.array([rm.kp_hip, rm.kp_knee, rm.kp_ankle] * 2)
        self.motor_kd = np.array([rm.kd_hip, rm.kd_knee, rm.kd_ankle] * 2)
        self.motor_tlim = np.array([rm.torque_limit_leg, rm.torque_limit_leg,
                                    rm.torque_limit_ankle] * 2)
        ankle_default = rm.default_ankle
        self.motor_default = np.array(
            [rm.default_hip, rm.default_knee, ankle_default] * 2)
        self.motor_damping = np.full(6, rm.motor_damping)

        # joint limits per coordinate (base coords unconstrained)
        lim_lo = np.full(self.nq, -1e9)
        lim_hi = np.full(self.nq, 1e9)
        per_leg = ([rm.hip_limits, rm.knee_limits, rm.tarsus_limits, rm.ankle_limits]
                   if passive else [rm.hip_limits, rm.knee_limits, rm.ankle_limits])
        for legs in self.leg_joint_bodies:
            for body, (lo, hi) in zip(legs, per_leg):
                lim_lo[2 + body] = lo
                lim_hi[2 + body] = hi
        self.limit_lo = lim_lo
        self.limit_hi = lim_hi
        self.policy_limit_lo = np.array([rm.hip_limits[0], rm.knee_limits[0]] * 2)
        self.policy_limit_hi = np.array([rm.hip_limits[1], rm.knee_limits[1]] * 2)

        # passive joints and their damping
        self.passive_coords = (np.array([2 + legs[2] for legs in self.leg_joint_bodies],
                                        dtype=np.int64)
                               if passive else np.zeros(0, dtype=np.int64))

        # virtual spring rods (one per leg when the passive segment exists)
        if passive:
            self.spr_body_a = np.array([legs[1] for legs in self.leg_joint_bodies],
                                       dtype=np.int64)
            self.spr_body_b = np.array([legs[2] for legs in self.leg_joint_bodies],
                                       dtype=np.int64)
            self.spr_local_a = np.array([rm.spring_anchor_shin] * 2)
            self.spr_local_b = np.array([rm.spring_anchor_tarsus] * 2)
            a = np.array(rm.spring_anchor_shin)
            b = np.array([0.0, -rm.shin_len]) + np.array(rm.spring_anchor_tarsus)
            self.spring_len0 = float(np.linalg.norm(b - a))
        else:
            self.spr_body_a = np.zeros(0, dtype=np.int64)
            self.spr_body_b = np.zeros(0, dtype=np.int64)
            self.spr_local_a = np.zeros((0, 2))
            self.spr_local_b = np.zeros((0, 2))
            self.spring_len0 = 0.0
        self.n_springs = len(self.spr_body_a)

        # default generalized pose with the sole resting at z = 0
        q = np.zeros(self.nq)
        joints = rm.default_joint_pose()
        for legs, angles in zip(self.leg_joint_bodies,
                                joints.reshape(2, -1)):
            for body, ang in zip(legs, angles):
                q[2 + body] = ang
        self.q_neutral_joints = joints
        th, px, pz = fk_positions(self, q)
        sole = np.inf
        for ci in range(self.n_contacts):
            b = self.con_body[ci]
            c, s = math.cos(th[b]), math.sin(th[b])
            lx, lz = self.con_local[ci]
            sole = min(sole, pz[b] + s * lx + c * lz)
        self.standing_height = -sole
        self.default_q = q.copy()
        self.default_q[1] = self.standing_height


def mass_matrix(ma, q):
    """Joint-space mass matrix at configuration q (numpy; calibration use)."""
    th, px, pz = fk_positions(ma, q)
    nq = ma.nq
    M = np.zeros((nq, nq))
    for b in range(ma.nb):
        c, s = math.cos(th[b]), math.sin(th[b])
        cx = px[b] + c * ma.com[b, 0] - s * ma.com[b, 1]
        cz = pz[b] + s * ma.com[b, 0] + c * ma.com[b, 1]
        jv = np.zeros((2, nq))
        jw = np.zeros(nq)
        jv[0, 0] = 1.0
        jv[1, 1] = 1.0
        k = b
        while k >= 0:
            jv[0, 2 + k] = -(cz - pz[k])
            jv[1, 2 + k] = cx - px[k]
            jw[2 + k] = 1.0
            k = ma.parent[k]
        M += ma.mass[b] * jv.T @ jv + ma.inertia[b] * np.outer(jw, jw)
    return M


def spring_length(ma, q, spring_index=0):
    """Rod length between the two anchors at configuration q."""
    th, px, pz = fk_positions(ma, q)
    pts = []
    for body, local in ((ma.spr_body_a[spring_index], ma.spr_local_a[spring_index]),
                        (ma.spr_body_b[spring_index], ma.spr_local_b[spring_index])):
        c, s = math.cos(th[body]), math.sin(th[body])
        pts.append((px[body] + c * local[0] - s * local[1],
                    pz[body] + s * local[0] + c * local[1]))
    return math.hypot(pts[1][0] - pts[0][0], pts[1][1] - pts[0][1])


def calibrate_spring(ma, sim_dt):
    """Auto-size rod stiffness/damping for the correction-pass integrator.

    Uses the apparent inertia of the passive pivot (all other joints free)
    and the numeric moment arm d(len)/d(phi) at the neutral pose.
    """
    rm = ma.robot
    if rm.spring_k is not None:
        return float(rm.spring_k), float(rm.spring_c or 0.0)
    if ma.n_springs == 0:
        return 0.0, 0.0
    q = ma.default_q
    Minv = np.linalg.inv(mass_matrix(ma, q))
    pc = int(ma.passive_coords[0])
    inertia_app = 1.0 / Minv[pc, pc]
    h = 1e-6
    qp, qm = q.copy(), q.copy()
    qp[pc] += h
    qm[pc] -= h
    arm = abs(spring_length(ma, qp) - spring_length(ma, qm)) / (2 * h)
    omega = rm.spring_omega_dt / sim_dt
    k_rot = inertia_app * omega * omega
    c_rot = 2.0 * rm.spring_zeta * math.sqrt(k_rot * inertia_app)
    return k_rot / arm**2, c_rot / arm**2


def fk_positions(ma, q):
    """Absolute angles and pivot positions for one configuration (numpy)."""
    nb = ma.nb
    th = np.zeros(nb)
    px = np.zeros(nb)
    pz = np.zeros(nb)
    th[0] = q[2]
    px[0] = q[0]
    pz[0] = q[1]
    for i in range(1, nb):
        p = ma.parent[i]
        c, s = math.cos(th[p]), math.sin(th[p])
        jx, jz = ma.jpos[i]
        px[i] = px[p] + c * jx - s * jz
        pz[i] = pz[p] + s * jx + c * jz
        th[i] = th[p] + q[2 + i]
    return th, px, pz


def default_robot(passive_segment=True, **overrides):
    return RobotModel(passive_segment=passive_segment, **overrides)
