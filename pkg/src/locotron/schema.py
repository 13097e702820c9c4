"""Named-slice vector schemas for observations and privileged states."""

import numpy as np


class VectorSchema:
    """Ordered (name, dim) fields packed into one flat float64 vector."""

    def __init__(self, fields):
        self.fields = [(name, int(dim)) for name, dim in fields]
        self.slices = {}
        off = 0
        for name, dim in self.fields:
            if dim < 0:
                raise ValueError(f"negative dim for field {name}")
            if name in self.slices:
                raise ValueError(f"duplicate field {name}")
            self.slices[name] = slice(off, off + dim)
            off += dim
        self.dim = off

    def pack(self, values):
        out = np.zeros(self.dim)
        for name, _ in self.fields:
            out[self.slices[name]] = values[name]
        return out

    def unpack(self, vec):
        return {name: np.asarray(vec)[..., self.slices[name]] for name, _ in self.fields}

    def dims(self):
        return {name: dim for name, dim in self.fields}


OBS_FIELDS = ("base_lin_vel", "base_ang_vel", "joint_pos", "joint_vel",
              "gravity_projection", "clock", "commands")

# Table-1 noise rows map onto these observation slices; clock and commands
# are never perturbed.
NOISE_FIELD_MAP = {
    "joint_position": "joint_pos",
    "joint_velocity": "joint_vel",
    "base_lin_vel": "base_lin_vel",
    "base_ang_vel": "base_ang_vel",
    "gravity_projection": "gravity_projection",
}


def build_obs_schema(n_joints):
    """Planar observation layout: the actor-visible rows of the split."""
    return VectorSchema([
        ("base_lin_vel", 2),
        ("base_ang_vel", 1),
        ("joint_pos", n_joints),
        ("joint_vel", n_joints),
        ("gravity_projection", 2),
        ("clock", 2),
        ("commands", 3),
    ])


def build_state_schema(obs_schema, action_dim, n_motors, n_env_params,
                       n_height_samples, n_feet=2):
    """Privileged state: noiseless observation fields plus simulator-only rows."""
    fields = list(obs_schema.fields)
    fields += [
        ("gait_heuristics", 2 * n_feet),
        ("height_map", n_height_samples),
        ("diff_noisy_actions", action_dim),
        ("diff_noisy_obs", obs_schema.dim),
        ("robot_env_params", n_env_params),
        ("kp_kd", 2 * n_motors),
        ("gravity", 2),
    ]
    return VectorSchema(fields)


def paper_reference_schema():
    """Full-size reference dims (observation 66, privileged extras 414)."""
    obs = VectorSchema([
        ("base_lin_vel", 3),
        ("base_ang_vel", 3),
        ("joint_pos", 26),
        ("joint_vel", 26),
        ("gravity_projection", 3),
        ("clock", 2),
        ("commands", 3),
    ])
    state = VectorSchema(list(obs.fields) + [
        ("gait_heuristics", 6),
        ("height_map", 121),
        ("diff_noisy_actions", 36),
        ("diff_noisy_obs", 61),
        ("robot_env_params", 147),
        ("kp_kd", 40),
        ("gravity", 3),
    ])
    return obs, state
