"""Single-robot simulation wrapper around the batch kernels."""

import math
from dataclasses import dataclass, field

import numpy as np

from .. import rewards as rw
from ..randomize import nominal_params
from ..schema import build_obs_schema, build_state_schema
from . import kernels
from .robot import RobotModel, calibrate_spring

SIM_DT = 1.0 / 2000.0
DECIMATION = 20


class SimDiverged(RuntimeError):
    """Raised when the integrator produces non-finite state."""


@dataclass
class Action:
    """Resolved PD command for the policy-controlled joints (hips, knees)."""

    pd_targets: np.ndarray
    kp: np.ndarray
    kd: np.ndarray

    @classmethod
    def from_policy(cls, u, model):
        """Map raw policy outputs to clamped targets and gains."""
        u = np.asarray(u, dtype=np.float64)
        ma = model.build() if isinstance(model, RobotModel) else model
        rm = ma.robot
        n = rm.n_policy_joints
        if u.shape != (3 * n,):
            raise ValueError(f"expected action dim {3 * n}, got {u.shape}")
        base_kp = ma.motor_kp[ma.policy_motor_idx]
        base_kd = ma.motor_kd[ma.policy_motor_idx]
        targets = rm.default_policy_targets() + rm.target_scale * u[:n]
        targets = np.clip(targets, ma.policy_limit_lo, ma.policy_limit_hi)
        lo, hi = rm.gain_clip
        kp = base_kp * np.clip(1.0 + rm.gain_scale * u[n:2 * n], lo, hi)
        kd = base_kd * np.clip(1.0 + rm.gain_scale * u[2 * n:], lo, hi)
        return cls(pd_targets=targets, kp=kp, kd=kd)

    @classmethod
    def hold_default(cls, model, kp_scale=1.0, kd_scale=1.0):
        ma = model.build() if isinstance(model, RobotModel) else model
        rm = ma.robot
        return cls(
            pd_targets=rm.default_policy_targets(),
            kp=kp_scale * ma.motor_kp[ma.policy_motor_idx],
            kd=kd_scale * ma.motor_kd[ma.policy_motor_idx],
        )


@dataclass
class SimState:
    q: np.ndarray
    qd: np.ndarray
    acc: np.ndarray
    anchor: np.ndarray
    anchor_on: np.ndarray
    phase: float = 0.0
    t: float = 0.0
    step_count: int = 0

    def copy(self):
        return SimState(self.q.copy(), self.qd.copy(), self.acc.copy(),
                        self.anchor.copy(), self.anchor_on.copy(),
                        self.phase, self.t, self.step_count)


@dataclass
class ContactReport:
    foot_forces: np.ndarray   # [n_feet, 2] (tangential, normal), last sub-step
    motor_tau: np.ndarray     # [6]
    spring_len: np.ndarray    # [n_springs]


class BipedSim:
    """Deterministic planar biped with PD actuation and penalty contact."""

    def __init__(self, robot=None, terrain=None, sim_dt=SIM_DT,
                 decimation=DECIMATION, spring_mode="alternate", spring_micro=8,
                 gait_period=0.8, episode_length=20.0,
                 min_height_frac=0.62, max_pitch=1.0):
        from .terrain import make_terrain
        self.robot = robot or RobotModel()
        self.model = self.robot.build()
        self.terrain = terrain if terrain is not None else make_terrain("smooth-plain")
        self.sim_dt = sim_dt
        self.decimation = decimation
        self.control_dt = sim_dt * decimation
        self.spring_mode = {"off": kernels.SPRING_OFF,
                            "every": kernels.SPRING_EVERY,
                            "alternate": kernels.SPRING_ALTERNATE}[spring_mode]
        self.spring_micro = spring_micro
        self.spring_k, self.spring_c = calibrate_spring(self.model, sim_dt)
        self.gait_period = gait_period
        self.episode_length = episode_length
        self.min_height = min_height_frac * self.model.standing_height
        self.max_pitch = max_pitch
        self.obs_schema = build_obs_schema(self.model.nb - 1)
        self.state_schema = build_state_schema(
            self.obs_schema, self.robot.action_dim, self.robot.n_motors,
            n_env_params=3 * self.robot.n_motors + 8, n_height_samples=11)

    # ------------------------------------------------------------------ state
    def default_state(self, base_lift=0.001, joint_offsets=None, warm=True):
        ma = self.model
        q = ma.default_q.copy()
        q[1] += base_lift + float(self.terrain.height(q[0]))
        if joint_offsets is not None:
            q[3:] += joint_offsets
        state = SimState(
            q=q, qd=np.zeros(ma.nq), acc=np.zeros(ma.nq),
            anchor=np.zeros(ma.n_contacts),
            anchor_on=np.zeros(ma.n_contacts, dtype=np.int64),
        )
        return self.warm_start(state) if warm else state

    def warm_start(self, state, action=None, env_params=None):
        """Evaluate forces at zero dt so Verlet starts from a fresh acc."""
        action = action or Action.hold_default(self.model)
        packed = self._motor_arrays(action, env_params)
        new, _, bad = self._run(state, *packed, n_substeps=1, correction_mode=0,
                                dt=0.0)
        if bad:
            raise SimDiverged("warm start diverged")
        return new

    def _motor_arrays(self, action, env_params):
        ma = self.model
        ep = env_params or nominal_params(ma.robot.n_motors)
        targets = ma.motor_default.copy()
        kp = ma.motor_kp.copy()
        kd = ma.motor_kd.copy()
        targets[ma.policy_motor_idx] = action.pd_targets
        kp[ma.policy_motor_idx] = action.kp
        kd[ma.policy_motor_idx] = action.kd
        targets = targets + ep.motor_offset
        kp = kp * ep.kp_factor
        kd = kd * ep.kd_factor
        damping = ma.motor_damping * ep.motor_damping
        return targets, kp, kd, ep.motor_strength.copy(), damping, ep

    def _run(self, state, targets, kp, kd, strength, damping, ep,
             n_substeps, correction_mode, dt=None):
        ma = self.model
        rm = ma.robot
        dt = self.sim_dt if dt is None else dt
        q = state.q[None].copy()
        qd = state.qd[None].copy()
        acc = state.acc[None].copy()
        anchor = state.anchor[None].copy()
        anchor_on = state.anchor_on[None].copy()
        foot_force = np.zeros((1, 2, 2))
        motor_tau = np.zeros((1, rm.n_motors))
        spring_len = np.full((1, max(ma.n_springs, 1)), ma.spring_len0)
        diverged = np.zeros(1, dtype=np.int64)
        kernels.step_batch(
            q, qd, acc, anchor, anchor_on,
            targets[None].copy(), kp[None].copy(), kd[None].copy(),
            strength[None].copy(), damping[None].copy(),
            np.array([ep.mass_scale]), np.array([9.81 + ep.gravity_offset]),
            np.array([rm.friction_mu * ep.friction_scale]),
            np.array([ep.restitution]),
            self.terrain.heights[None].copy(), self.terrain.x0, self.terrain.dx,
            ma.parent, ma.jpos, ma.com, ma.mass, ma.inertia,
            ma.con_body, ma.con_local, ma.con_foot,
            ma.motor_coord, ma.motor_tlim,
            ma.limit_lo, ma.limit_hi, rm.joint_limit_k, rm.joint_limit_c,
            ma.passive_coords, rm.passive_damping,
            ma.spr_body_a, ma.spr_body_b, ma.spr_local_a, ma.spr_local_b,
            self.spring_k, self.spring_c, ma.spring_len0,
            rm.contact_kn, rm.contact_cn, rm.contact_kt, rm.contact_ct,
            n_substeps, dt, self.spring_mode, correction_mode, self.spring_micro,
            foot_force, motor_tau, spring_len, diverged,
        )
        new = SimState(q[0], qd[0], acc[0], anchor[0], anchor_on[0],
                       state.phase, state.t, state.step_count)
        report = ContactReport(foot_force[0], motor_tau[0],
                               spring_len[0, :ma.n_springs])
        return new, report, bool(diverged[0])

    def step(self, state, action, env_params=None, n_substeps=None):
        """Advance one control step (`decimation` sub-steps)."""
        n = self.decimation if n_substeps is None else n_substeps
        packed = self._motor_arrays(action, env_params)
        new, report, bad = self._run(state, *packed, n, correction_mode=0)
        if bad:
            raise SimDiverged(f"non-finite state at t={state.t:.3f}")
        new.phase = (state.phase + self.control_dt / self.gait_period) % 1.0
        new.t = state.t + self.control_dt
        new.step_count = state.step_count + 1
        return new, report

    def substep_correct(self, state, n_substeps, action=None, env_params=None):
        """Alternating free / spring-only sub-steps (rod-length correction)."""
        action = action or Action.hold_default(self.model)
        packed = self._motor_arrays(action, env_params)
        new, _, bad = self._run(state, *packed, n_substeps, correction_mode=1)
        if bad:
            raise SimDiverged("correction diverged")
        return new

    # ------------------------------------------------------------- kinematics
    def body_kinematics(self, state):
        """World angles, pivots, angular/linear velocities and COMs per body."""
        ma = self.model
        nb = ma.nb
        q, qd = state.q, state.qd
        th = np.zeros(nb)
        px = np.zeros(nb)
        pz = np.zeros(nb)
        w = np.zeros(nb)
        vx = np.zeros(nb)
        vz = np.zeros(nb)
        th[0], px[0], pz[0] = q[2], q[0], q[1]
        w[0], vx[0], vz[0] = qd[2], qd[0], qd[1]
        for i in range(1, nb):
            p = ma.parent[i]
            c, s = math.cos(th[p]), math.sin(th[p])
            rx = c * ma.jpos[i, 0] - s * ma.jpos[i, 1]
            rz = s * ma.jpos[i, 0] + c * ma.jpos[i, 1]
            px[i] = px[p] + rx
            pz[i] = pz[p] + rz
            th[i] = th[p] + q[2 + i]
            w[i] = w[p] + qd[2 + i]
            vx[i] = vx[p] - w[p] * rz
            vz[i] = vz[p] + w[p] * rx
        c, s = np.cos(th), np.sin(th)
        cx = px + c * ma.com[:, 0] - s * ma.com[:, 1]
        cz = pz + s * ma.com[:, 0] + c * ma.com[:, 1]
        cvx = vx - w * (cz - pz)
        cvz = vz + w * (cx - px)
        return {"th": th, "px": px, "pz": pz, "w": w, "vx": vx, "vz": vz,
                "com_x": cx, "com_z": cz, "com_vx": cvx, "com_vz": cvz}

    def point_on_body(self, kin, body, local):
        c = math.cos(kin["th"][body])
        s = math.sin(kin["th"][body])
        x = kin["px"][body] + c * local[0] - s * local[1]
        z = kin["pz"][body] + s * local[0] + c * local[1]
        vx = kin["vx"][body] - kin["w"][body] * (z - kin["pz"][body])
        vz = kin["vz"][body] + kin["w"][body] * (x - kin["px"][body])
        return x, z, vx, vz

    def foot_points(self, state):
        """Per-foot sole-center position and velocity."""
        ma = self.model
        rm = ma.robot
        kin = self.body_kinematics(state)
        mid = ((rm.foot_heel + rm.foot_toe) / 2.0, -rm.ankle_height)
        out = []
        for fb in ma.foot_bodies:
            out.append(self.point_on_body(kin, fb, mid))
        return np.array(out)  # [n_feet, 4] -> x, z, vx, vz

    def spring_forces(self, state):
        """Static rod forces: magnitude k*(len - len0) along the rod axis."""
        ma = self.model
        rm = ma.robot
        kin = self.body_kinematics(state)
        out = []
        for i in range(ma.n_springs):
            ax, az, _, _ = self.point_on_body(kin, ma.spr_body_a[i], ma.spr_local_a[i])
            bx, bz, _, _ = self.point_on_body(kin, ma.spr_body_b[i], ma.spr_local_b[i])
            d = np.array([bx - ax, bz - az])
            ln = float(np.linalg.norm(d))
            u = d / ln if ln > 1e-12 else np.zeros(2)
            f_on_b = -rm.spring_k * (ln - ma.spring_len0) * u
            out.append({"length": ln, "force_a": -f_on_b, "force_b": f_on_b})
        return out

    def mechanical_energy(self, state, include_spring=True, gravity=9.81):
        """Kinetic plus gravitational (plus rod) energy; test oracle support."""
        ma = self.model
        kin = self.body_kinematics(state)
        ke = 0.5 * np.sum(ma.mass * (kin["com_vx"] ** 2 + kin["com_vz"] ** 2))
        ke += 0.5 * np.sum(ma.inertia * kin["w"] ** 2)
        pe = gravity * np.sum(ma.mass * kin["com_z"])
        e = float(ke + pe)
        if include_spring:
            for s in self.spring_forces(state):
                e += 0.5 * ma.robot.spring_k * (s["length"] - ma.spring_len0) ** 2
        return e

    # ------------------------------------------------------------ observation
    def base_height(self, state):
        return float(state.q[1] - self.terrain.height(state.q[0]))

    def projected_gravity(self, state):
        th = state.q[2]
        return np.array([-math.sin(th), -math.cos(th)])

    def clock(self, state):
        return np.array([math.sin(2 * math.pi * state.phase),
                         math.cos(2 * math.pi * state.phase)])

    def observe(self, state, cmd):
        """Noise-free observation vector (noise/delay applied by the caller)."""
        return self.obs_schema.pack({
            "base_lin_vel": state.qd[0:2],
            "base_ang_vel": state.qd[2:3],
            "joint_pos": state.q[3:],
            "joint_vel": state.qd[3:],
            "gravity_projection": self.projected_gravity(state),
            "clock": self.clock(state),
            "commands": np.asarray(cmd, dtype=np.float64),
        })

    def height_map(self, state, n=11, span=0.5):
        xs = state.q[0] + np.linspace(-span, span, n)
        return self.terrain.height(xs) - self.terrain.height(state.q[0])

    def privileged_state(self, state, cmd, env_params=None, true_obs=None,
                         noisy_obs=None, action_residual=None,
                         applied_kp=None, applied_kd=None, gait=None):
        """Privileged vector: noiseless observation plus simulator-only rows."""
        ma = self.model
        rm = ma.robot
        ep = env_params or nominal_params(rm.n_motors)
        if true_obs is None:
            true_obs = self.observe(state, cmd)
        if noisy_obs is None:
            noisy_obs = true_obs
        if action_residual is None:
            action_residual = np.zeros(rm.action_dim)
        if applied_kp is None:
            applied_kp = ma.motor_kp * ep.kp_factor
        if applied_kd is None:
            applied_kd = ma.motor_kd * ep.kd_factor
        gait = gait or rw.GaitParams(period=self.gait_period)
        x_star, z_star = rw.foot_targets(
            state.phase, np.full(2, state.q[0]), float(state.qd[0]),
            float(cmd[0]), gait)
        heur = np.stack([x_star - state.q[0], z_star], axis=1).reshape(-1)
        parts = self.obs_schema.unpack(true_obs)
        parts.update({
            "gait_heuristics": heur,
            "height_map": self.height_map(state),
            "diff_noisy_actions": action_residual,
            "diff_noisy_obs": noisy_obs - true_obs,
            "robot_env_params": ep.as_vector(),
            "kp_kd": np.concatenate([applied_kp, applied_kd]),
            "gravity": np.array([0.0, -(9.81 + ep.gravity_offset)]),
        })
        return self.state_schema.pack(parts)

    # ------------------------------------------------------------ termination
    def check_termination(self, state):
        q = state.q
        if not np.all(np.isfinite(q)) or not np.all(np.isfinite(state.qd)):
            return "diverged"
        kin = self.body_kinematics(state)
        # knee pivots (shin body origins) or torso COM scraping the ground
        for legs in self.model.leg_joint_bodies:
            knee_body = legs[1]
            kx, kz = kin["px"][knee_body], kin["pz"][knee_body]
            if kz - self.terrain.height(kx) < 0.02:
                return "self_collision"
        if kin["com_z"][0] - self.terrain.height(kin["com_x"][0]) < 0.3:
            return "self_collision"
        if self.base_height(state) < self.min_height or abs(q[2]) > self.max_pitch:
            return "fell"
        if state.t >= self.episode_length - 1e-9:
            return "timeout"
        return "running"
