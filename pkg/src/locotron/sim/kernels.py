"""Hot simulation kernels (numba @njit with a pure-numpy/python fallback).

One kernel advances a batch of independent planar bipeds. Dynamics sub-steps
use velocity-Verlet with composite mass-matrix / bias assembly from point
Jacobians and a hand-rolled Cholesky solve (identical operation sequences on
both execution paths).

The stiff virtual-spring rod is handled by the alternating sub-step scheme:
regular dynamics sub-steps are spring-free; after every second one (or every
one, configurable) a zero-time correction pass integrates spring-only
dynamics in `spring_micro` micro-kicks, snapping rod lengths back to nominal
without disturbing the simulation clock.
"""

import math

import numpy as np

from .._accel import maybe_njit

SPRING_OFF = 0
SPRING_EVERY = 1
SPRING_ALTERNATE = 2


@maybe_njit
def _terrain_height(x, heights, x0, dx):
    n = heights.shape[0]
    t = (x - x0) / dx
    if t <= 0.0:
        return heights[0]
    if t >= n - 1:
        return heights[n - 1]
    i = int(t)
    f = t - i
    return heights[i] * (1.0 - f) + heights[i + 1] * f


@maybe_njit
def _chol_solve(M, b, x, L, y, n):
    """Solve M x = b for SPD M via in-place Cholesky. Returns 0 on failure."""
    for i in range(n):
        for j in range(n):
            L[i, j] = 0.0
    for i in range(n):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return 0
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return 1


@maybe_njit
def _fk(q, vh, e, parent, jpos, th, px, pz, w, vx, vz, ax0, az0):
    """Positions, velocities and bias accelerations of every body frame."""
    nb = parent.shape[0]
    th[0] = q[e, 2]
    px[0] = q[e, 0]
    pz[0] = q[e, 1]
    w[0] = vh[2]
    vx[0] = vh[0]
    vz[0] = vh[1]
    ax0[0] = 0.0
    az0[0] = 0.0
    for i in range(1, nb):
        p = parent[i]
        c = math.cos(th[p])
        s = math.sin(th[p])
        rx = c * jpos[i, 0] - s * jpos[i, 1]
        rz = s * jpos[i, 0] + c * jpos[i, 1]
        px[i] = px[p] + rx
        pz[i] = pz[p] + rz
        th[i] = th[p] + q[e, 2 + i]
        w[i] = w[p] + vh[2 + i]
        vx[i] = vx[p] - w[p] * rz
        vz[i] = vz[p] + w[p] * rx
        ax0[i] = ax0[p] - w[p] * w[p] * rx
        az0[i] = az0[p] - w[p] * w[p] * rz


@maybe_njit
def _mass_bias(parent, com, mass, inertia, ms, g,
               th, px, pz, w, ax0, az0, M, hv, jv0, jv1, jw):
    nb = parent.shape[0]
    nq = M.shape[0]
    for i in range(nq):
        hv[i] = 0.0
        for j in range(nq):
            M[i, j] = 0.0
    for b in range(nb):
        c = math.cos(th[b])
        s = math.sin(th[b])
        cx = px[b] + c * com[b, 0] - s * com[b, 1]
        cz = pz[b] + s * com[b, 0] + c * com[b, 1]
        rcx = cx - px[b]
        rcz = cz - pz[b]
        bax = ax0[b] - w[b] * w[b] * rcx
        baz = az0[b] - w[b] * w[b] * rcz
        for i in range(nq):
            jv0[i] = 0.0
            jv1[i] = 0.0
            jw[i] = 0.0
        jv0[0] = 1.0
        jv1[1] = 1.0
        k = b
        while k >= 0:
            ci = 2 + k
            jv0[ci] = -(cz - pz[k])
            jv1[ci] = cx - px[k]
            jw[ci] = 1.0
            k = parent[k]
        mb = mass[b] * ms
        ib = inertia[b] * ms
        for i in range(nq):
            if jv0[i] == 0.0 and jv1[i] == 0.0 and jw[i] == 0.0:
                continue
            hv[i] += mb * (jv0[i] * bax + jv1[i] * (baz + g))
            for j in range(i + 1):
                M[i, j] += mb * (jv0[i] * jv0[j] + jv1[i] * jv1[j]) \
                    + ib * jw[i] * jw[j]
    for i in range(nq):
        for j in range(i):
            M[j, i] = M[i, j]


@maybe_njit
def _point_force(tau, parent, px, pz, b, ppx, ppz, fx, fz):
    tau[0] += fx
    tau[1] += fz
    k = b
    while k >= 0:
        tau[2 + k] += -(ppz - pz[k]) * fx + (ppx - px[k]) * fz
        k = parent[k]


@maybe_njit
def _spring_lengths(e, th, px, pz, spr_body_a, spr_body_b,
                    spr_local_a, spr_local_b, out_spring_len):
    for spr in range(spr_body_a.shape[0]):
        ba = spr_body_a[spr]
        bb = spr_body_b[spr]
        ca = math.cos(th[ba])
        sa = math.sin(th[ba])
        pax = px[ba] + ca * spr_local_a[spr, 0] - sa * spr_local_a[spr, 1]
        paz = pz[ba] + sa * spr_local_a[spr, 0] + ca * spr_local_a[spr, 1]
        cb = math.cos(th[bb])
        sb = math.sin(th[bb])
        pbx = px[bb] + cb * spr_local_b[spr, 0] - sb * spr_local_b[spr, 1]
        pbz = pz[bb] + sb * spr_local_b[spr, 0] + cb * spr_local_b[spr, 1]
        dx = pbx - pax
        dz = pbz - paz
        out_spring_len[e, spr] = math.sqrt(dx * dx + dz * dz)


@maybe_njit
def _spring_tau(tau, e, parent, th, px, pz, w, vx, vz,
                spr_body_a, spr_body_b, spr_local_a, spr_local_b,
                spring_k, spring_c, spring_len0, out_spring_len):
    ns = spr_body_a.shape[0]
    for spr in range(ns):
        ba = spr_body_a[spr]
        bb = spr_body_b[spr]
        ca = math.cos(th[ba])
        sa = math.sin(th[ba])
        pax = px[ba] + ca * spr_local_a[spr, 0] - sa * spr_local_a[spr, 1]
        paz = pz[ba] + sa * spr_local_a[spr, 0] + ca * spr_local_a[spr, 1]
        cb = math.cos(th[bb])
        sb = math.sin(th[bb])
        pbx = px[bb] + cb * spr_local_b[spr, 0] - sb * spr_local_b[spr, 1]
        pbz = pz[bb] + sb * spr_local_b[spr, 0] + cb * spr_local_b[spr, 1]
        dx = pbx - pax
        dz = pbz - paz
        ln = math.sqrt(dx * dx + dz * dz)
        out_spring_len[e, spr] = ln
        if ln < 1e-9:
            continue
        ux = dx / ln
        uz = dz / ln
        vax = vx[ba] - w[ba] * (paz - pz[ba])
        vaz = vz[ba] + w[ba] * (pax - px[ba])
        vbx = vx[bb] - w[bb] * (pbz - pz[bb])
        vbz = vz[bb] + w[bb] * (pbx - px[bb])
        vrel = (vbx - vax) * ux + (vbz - vaz) * uz
        fmag = -spring_k * (ln - spring_len0) - spring_c * vrel
        _point_force(tau, parent, px, pz, bb, pbx, pbz, fmag * ux, fmag * uz)
        _point_force(tau, parent, px, pz, ba, pax, paz, -fmag * ux, -fmag * uz)


@maybe_njit
def step_batch(
    # state (mutated): [N, nq] / [N, nc]
    q, qd, acc, anchor, anchor_on,
    # per-env motor command and randomization arrays
    motor_target, motor_kp, motor_kd, motor_strength, motor_damp,
    mass_scale, gravity, mu, restitution,
    # terrain grids [N, nt]
    terrain, terrain_x0, terrain_dx,
    # model constants
    parent, jpos, com, mass, inertia,
    con_body, con_local, con_foot,
    motor_coord, motor_tlim,
    limit_lo, limit_hi, limit_k, limit_c,
    passive_coords, passive_damping,
    spr_body_a, spr_body_b, spr_local_a, spr_local_b,
    spring_k, spring_c, spring_len0,
    kn, cn, kt, ct,
    # integration controls
    n_substeps, dt, spring_mode, correction_mode, spring_micro,
    # outputs
    out_foot_force, out_motor_tau, out_spring_len, out_diverged,
):
    N = q.shape[0]
    nq = q.shape[1]
    nb = parent.shape[0]
    nc = con_body.shape[0]
    nm = motor_coord.shape[0]
    ns = spr_body_a.shape[0]

    for e in range(N):
        if out_diverged[e] != 0:
            continue
        th = np.zeros(nb)
        px = np.zeros(nb)
        pz = np.zeros(nb)
        w = np.zeros(nb)
        vx = np.zeros(nb)
        vz = np.zeros(nb)
        ax0 = np.zeros(nb)
        az0 = np.zeros(nb)
        M = np.zeros((nq, nq))
        L = np.zeros((nq, nq))
        hv = np.zeros(nq)
        tau = np.zeros(nq)
        yv = np.zeros(nq)
        vh = np.zeros(nq)
        qdd = np.zeros(nq)
        jv0 = np.zeros(nq)
        jv1 = np.zeros(nq)
        jw = np.zeros(nq)
        sacc = np.zeros(nq)
        g_eff = gravity[e]
        mu_e = mu[e]
        rest_e = restitution[e]
        ms = mass_scale[e]

        for sstep in range(n_substeps):
            main_step = True
            if correction_mode == 1 and (sstep % 2) == 1:
                main_step = False
            if main_step:
                # ---- regular dynamics sub-step (velocity Verlet)
                for i in range(nq):
                    vh[i] = qd[e, i] + 0.5 * dt * acc[e, i]
                    q[e, i] = q[e, i] + dt * vh[i]
                _fk(q, vh, e, parent, jpos, th, px, pz, w, vx, vz, ax0, az0)
                _mass_bias(parent, com, mass, inertia, ms, g_eff,
                           th, px, pz, w, ax0, az0, M, hv, jv0, jv1, jw)
                for i in range(nq):
                    tau[i] = 0.0
                # motors
                for m in range(nm):
                    ci = motor_coord[m]
                    t = motor_kp[e, m] * (motor_target[e, m] - q[e, ci]) \
                        - motor_kd[e, m] * vh[ci]
                    t *= motor_strength[e, m]
                    if t > motor_tlim[m]:
                        t = motor_tlim[m]
                    elif t < -motor_tlim[m]:
                        t = -motor_tlim[m]
                    t -= motor_damp[e, m] * vh[ci]
                    tau[ci] += t
                    out_motor_tau[e, m] = t
                # joint limits
                for i in range(3, nq):
                    if q[e, i] < limit_lo[i]:
                        tau[i] += limit_k * (limit_lo[i] - q[e, i]) - limit_c * vh[i]
                    elif q[e, i] > limit_hi[i]:
                        tau[i] += limit_k * (limit_hi[i] - q[e, i]) - limit_c * vh[i]
                # contacts
                for f2 in range(out_foot_force.shape[1]):
                    out_foot_force[e, f2, 0] = 0.0
                    out_foot_force[e, f2, 1] = 0.0
                for cpt in range(nc):
                    b = con_body[cpt]
                    cb = math.cos(th[b])
                    sb = math.sin(th[b])
                    ppx = px[b] + cb * con_local[cpt, 0] - sb * con_local[cpt, 1]
                    ppz = pz[b] + sb * con_local[cpt, 0] + cb * con_local[cpt, 1]
                    pvx = vx[b] - w[b] * (ppz - pz[b])
                    pvz = vz[b] + w[b] * (ppx - px[b])
                    hter = _terrain_height(ppx, terrain[e], terrain_x0, terrain_dx)
                    phi = ppz - hter
                    if phi < 0.0:
                        cn_eff = cn if pvz < 0.0 else cn * (1.0 - rest_e)
                        fn = -kn * phi - cn_eff * pvz
                        if fn < 0.0:
                            fn = 0.0
                        if anchor_on[e, cpt] == 0:
                            anchor[e, cpt] = ppx
                            anchor_on[e, cpt] = 1
                        ft = -kt * (ppx - anchor[e, cpt]) - ct * pvx
                        fmax = mu_e * fn
                        if ft > fmax:
                            ft = fmax
                        elif ft < -fmax:
                            ft = -fmax
                        anchor[e, cpt] = ppx + (ft + ct * pvx) / kt
                        _point_force(tau, parent, px, pz, b, ppx, ppz, ft, fn)
                        out_foot_force[e, con_foot[cpt], 0] += ft
                        out_foot_force[e, con_foot[cpt], 1] += fn
                    else:
                        anchor_on[e, cpt] = 0
                # passive pivot bleed
                for ppi in range(passive_coords.shape[0]):
                    ci = passive_coords[ppi]
                    tau[ci] -= passive_damping * vh[ci]
                # report rod lengths even on spring-free sub-steps
                if ns > 0:
                    _spring_lengths(e, th, px, pz, spr_body_a, spr_body_b,
                                    spr_local_a, spr_local_b, out_spring_len)
                for i in range(nq):
                    tau[i] -= hv[i]
                ok = _chol_solve(M, tau, qdd, L, yv, nq)
                if ok == 0:
                    out_diverged[e] = 1
                    break
                bad = 0
                for i in range(nq):
                    qd[e, i] = vh[i] + 0.5 * dt * qdd[i]
                    acc[e, i] = qdd[i]
                    if not (math.isfinite(q[e, i]) and math.isfinite(qd[e, i])):
                        bad = 1
                if bad == 1:
                    out_diverged[e] = 1
                    break

            # ---- zero-time spring correction pass
            run_spring = ns > 0 and spring_mode != SPRING_OFF
            if correction_mode == 1:
                run_spring = ns > 0 and not main_step
            elif spring_mode == SPRING_ALTERNATE:
                run_spring = run_spring and (sstep % 2) == 1
            if run_spring:
                dmu = dt / spring_micro
                for i in range(nq):
                    sacc[i] = 0.0
                for _micro in range(spring_micro):
                    for i in range(nq):
                        vh[i] = qd[e, i] + 0.5 * dmu * sacc[i]
                        q[e, i] = q[e, i] + dmu * vh[i]
                    _fk(q, vh, e, parent, jpos, th, px, pz, w, vx, vz, ax0, az0)
                    _mass_bias(parent, com, mass, inertia, ms, 0.0,
                               th, px, pz, w, ax0, az0, M, hv, jv0, jv1, jw)
                    for i in range(nq):
                        tau[i] = 0.0
                    _spring_tau(tau, e, parent, th, px, pz, w, vx, vz,
                                spr_body_a, spr_body_b, spr_local_a, spr_local_b,
                                spring_k, spring_c, spring_len0, out_spring_len)
                    for ppi in range(passive_coords.shape[0]):
                        ci = passive_coords[ppi]
                        tau[ci] -= passive_damping * vh[ci]
                    for i in range(nq):
                        tau[i] -= hv[i]
                    ok = _chol_solve(M, tau, qdd, L, yv, nq)
                    if ok == 0:
                        out_diverged[e] = 1
                        break
                    bad = 0
                    for i in range(nq):
                        qd[e, i] = vh[i] + 0.5 * dmu * qdd[i]
                        sacc[i] = qdd[i]
                        if not (math.isfinite(q[e, i]) and math.isfinite(qd[e, i])):
                            bad = 1
                    if bad == 1:
                        out_diverged[e] = 1
                        break
                if out_diverged[e] != 0:
                    break
    return 0


@maybe_njit
def fk_points(q, parent, jpos, out_th, out_px, out_pz):
    """Batch forward kinematics: absolute angles and pivots per body."""
    N = q.shape[0]
    nb = parent.shape[0]
    for e in range(N):
        out_th[e, 0] = q[e, 2]
        out_px[e, 0] = q[e, 0]
        out_pz[e, 0] = q[e, 1]
        for i in range(1, nb):
            p = parent[i]
            c = math.cos(out_th[e, p])
            s = math.sin(out_th[e, p])
            out_px[e, i] = out_px[e, p] + c * jpos[i, 0] - s * jpos[i, 1]
            out_pz[e, i] = out_pz[e, p] + s * jpos[i, 0] + c * jpos[i, 1]
            out_th[e, i] = out_th[e, p] + q[e, 2 + i]
    return 0
