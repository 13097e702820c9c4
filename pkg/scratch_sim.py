"""Scratch tuning script for the simulator (not part of the package)."""
import time
import numpy as np
from locotron.sim import BipedSim, Action, default_robot, make_terrain
from locotron.sim.robot import RobotModel

np.set_printoptions(precision=4, suppress=True, linewidth=140)

# --- standing height / default pose
sim = BipedSim()
st = sim.default_state()
print("standing height:", sim.model.standing_height)
print("default q:", st.q)
print("spring len0:", sim.model.spring_len0)
print("total mass:", sim.robot.total_mass)

# --- free fall check (no passive segment, zero gains)
robot_nf = default_robot(passive_segment=False)
simff = BipedSim(robot=robot_nf)
stf = simff.default_state()
stf.q[1] += 3.0
z0 = stf.q[1]
act0 = Action(pd_targets=robot_nf.default_policy_targets(),
              kp=np.zeros(4), kd=np.zeros(4))
# zero also ankle gains: hack via motor arrays? ankles have fixed gains.
# At rest at default pose ankle torque=0, stays zero in uniform gravity.
t0 = time.time()
for k in range(50):  # 0.5 s
    stf, rep = simff.step(stf, act0)
t_half = (z0 - stf.q[1])
print(f"free fall drop after 0.5s: {t_half:.6f} vs {0.5*9.81*0.25:.6f} "
      f"err={abs(t_half-0.5*9.81*0.25):.2e}")

# --- standing on ground with default PD
sim2 = BipedSim()
st2 = sim2.default_state()
hold = Action.hold_default(sim2.model)
t0 = time.time()
n_steps = 200  # 2 s
for k in range(n_steps):
    st2, rep2 = sim2.step(st2, hold)
elapsed = time.time() - t0
print(f"\nstanding 2s: base z={st2.q[1]:.4f} pitch={st2.q[2]:.4f} "
      f"base x={st2.q[0]:.4f}")
print("joint q:", st2.q[3:])
print("foot forces:", rep2.foot_forces)
print("sum normal:", rep2.foot_forces[:, 1].sum(), "vs mg:", sim2.robot.total_mass * 9.81)
print("spring len:", rep2.spring_len, "dev:", np.abs(rep2.spring_len - sim2.model.spring_len0) / sim2.model.spring_len0)
print("motor tau:", rep2.motor_tau)
print(f"viability: {sim2.check_termination(st2)}")
print(f"speed: {n_steps/elapsed:.0f} control steps/s/env ({elapsed:.2f}s for 2 sim-s)")

# --- energy conservation (no passive, no damping, free swing)
robot_e = default_robot(passive_segment=False, motor_damping=0.0, passive_damping=0.0)
sime = BipedSim(robot=robot_e)
ste = sime.default_state()
ste.q[1] += 8.0
ste.qd[3] = 1.0   # swing thigh
ste.qd[4] = -0.5
ste.qd[7] = 0.7
e0 = sime.mechanical_energy(ste, include_spring=False)
act_passive = Action(pd_targets=robot_e.default_policy_targets(), kp=np.zeros(4), kd=np.zeros(4))
# ankles still have fixed PD gains; zero them via model override
robot_e2 = default_robot(passive_segment=False, motor_damping=0.0, passive_damping=0.0,
                         kp_ankle=0.0, kd_ankle=0.0)
sime = BipedSim(robot=robot_e2)
ste = sime.default_state(); ste.q[1] += 8.0
ste.qd[3] = 1.0; ste.qd[4] = -0.5; ste.qd[7] = 0.7
e0 = sime.mechanical_energy(ste, include_spring=False)
for k in range(100):  # 1 s
    ste, _ = sime.step(ste, act_passive)
e1 = sime.mechanical_energy(ste, include_spring=False)
print(f"\nenergy drift over 1s: {abs(e1-e0)/abs(e0)*100:.4f}% (e0={e0:.3f}, e1={e1:.3f})")

# --- virtual spring deviation + correction
sim3 = BipedSim()
st3 = sim3.default_state()
for k in range(100):
    st3, rep3 = sim3.step(st3, hold)
dev = np.abs(rep3.spring_len - sim3.model.spring_len0) / sim3.model.spring_len0
print(f"\nspring deviation standing: {dev}")

# quasi-static correction test: zero gravity, displace passive joint
robot_q = default_robot()
simq = BipedSim(robot=robot_q)
stq = simq.default_state()
# displace passive joints (tarsus) to create ~5% rod deviation
ma = simq.model
for pc in ma.passive_coords:
    stq.q[pc] += 0.11
lens = [simq.spring_forces(stq)[i]["length"] for i in range(2)]
dev0 = abs(lens[0] - ma.spring_len0) / ma.spring_len0
print(f"initial rod deviation: {dev0*100:.2f}%")
# zero-gravity quasi-static: hack gравity via env params? gravity_offset=-9.81
from locotron.randomize import nominal_params
ep = nominal_params(6)
ep.gravity_offset = -9.81
act_z = Action(pd_targets=robot_q.default_policy_targets(), kp=np.zeros(4), kd=np.zeros(4))
stq2 = stq.copy()
for n in (2, 4, 8, 16):
    s = stq.copy()
    s = simq.substep_correct(s, n, action=act_z, env_params=ep)
    ln = simq.spring_forces(s)[0]["length"]
    print(f"after n={n}: deviation {abs(ln-ma.spring_len0)/ma.spring_len0*100:.3f}%")
