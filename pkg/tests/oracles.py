"""Independent reference implementations used only by the tests.

The inverse-dynamics oracle here deliberately avoids the package's
world-origin spatial-algebra formulation: it recurses classical
per-link velocities/accelerations, applies Newton-Euler at each link's
centre of mass, and projects through per-link com Jacobians built
column by column.  Agreement between the two paths pins down signs,
reference points and bookkeeping on both sides.
"""

from __future__ import annotations

import math

import numpy as np

from quadwbc.dynamics import quat_to_rot, quat_exp, quat_mul
from quadwbc.model import RobotModel, GeneralizedState, quat_normalize


def _rot_about(axis: np.ndarray, angle: float) -> np.ndarray:
    a = axis / np.linalg.norm(axis)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * (K @ K)


def _link_kinematics(model: RobotModel, state: GeneralizedState,
                     udot: np.ndarray):
    """Classical per-link kinematics: returns dict of world quantities."""
    nl = len(model.links)
    R = [None] * nl
    p = [None] * nl          # link origin
    w = [None] * nl          # angular velocity
    v = [None] * nl          # linear velocity of the link origin point
    alpha = [None] * nl      # angular acceleration
    a = [None] * nl          # linear acceleration of the origin point
    jpos = [None] * nl
    jaxis = [None] * nl

    R[0] = quat_to_rot(state.base_quat)
    p[0] = np.array(state.base_pos)
    w[0] = np.array(state.base_ang_vel)
    v[0] = np.array(state.base_lin_vel)
    a[0] = udot[0:3].copy()
    alpha[0] = udot[3:6].copy()

    for i in range(1, nl):
        lk = model.links[i]
        par = lk.parent
        ax = R[par] @ lk.axis
        pj = p[par] + R[par] @ lk.origin
        qd_i = state.qd[lk.dof]
        qdd_i = udot[6 + lk.dof]
        jpos[i] = pj
        jaxis[i] = ax
        R[i] = _rot_about(ax, state.q[lk.dof]) @ R[par]
        p[i] = pj
        # the joint pivot is a material point of the parent
        r = pj - p[par]
        v[i] = v[par] + np.cross(w[par], r)
        a[i] = a[par] + np.cross(alpha[par], r) \
            + np.cross(w[par], np.cross(w[par], r))
        w[i] = w[par] + ax * qd_i
        # d(axis)/dt = w_parent x axis since the axis is fixed in the parent
        alpha[i] = alpha[par] + ax * qdd_i \
            + np.cross(w[par], ax) * qd_i
    return R, p, w, v, alpha, a, jpos, jaxis


def inverse_dynamics_oracle(model: RobotModel, state: GeneralizedState,
                            udot: np.ndarray,
                            gravity: np.ndarray) -> np.ndarray:
    """Generalized forces for a desired acceleration (no externals).

    Newton-Euler about each link's com plus virtual-work projection:

        Q = sum_i Jc_i^T [ m_i (a_com,i - g), I_i alpha_i + w x I_i w ]
    """
    udot = np.asarray(udot, dtype=float)
    R, p, w, v, alpha, a, jpos, jaxis = _link_kinematics(model, state, udot)
    Q = np.zeros(model.nv)
    for i, lk in enumerate(model.links):
        c = p[i] + R[i] @ lk.com
        r = c - p[i]
        a_c = a[i] + np.cross(alpha[i], r) \
            + np.cross(w[i], np.cross(w[i], r))
        Iw = R[i] @ lk.inertia @ R[i].T
        f = lk.mass * (a_c - gravity)
        n = Iw @ alpha[i] + np.cross(w[i], Iw @ w[i])

        # com Jacobian of this link, columns only for dofs on its path
        J = np.zeros((6, model.nv))
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            J[:3, k] = e
            J[:3, 3 + k] = np.cross(e, c - p[0])
            J[3:, 3 + k] = e
        for d in lk.path_dofs:
            li = 1 + d
            J[:3, 6 + d] = np.cross(jaxis[li], c - jpos[li])
            J[3:, 6 + d] = jaxis[li]
        Q += J[:3].T @ f + J[3:].T @ n
    return Q


def perturb_state(state: GeneralizedState, u: np.ndarray,
                  eps: float) -> GeneralizedState:
    """Move the configuration a small step eps along velocity u."""
    return GeneralizedState(
        base_pos=state.base_pos + eps * u[:3],
        base_quat=quat_normalize(
            quat_mul(quat_exp(eps * u[3:6]), state.base_quat)),
        q=state.q + eps * u[6:],
        base_lin_vel=state.base_lin_vel,
        base_ang_vel=state.base_ang_vel,
        qd=state.qd)


def random_state(model: RobotModel, rng: np.random.Generator,
                 vel_scale: float = 1.0) -> GeneralizedState:
    qmin, qmax = model.joint_limits()
    span = qmax - qmin
    q = qmin + span * (0.1 + 0.8 * rng.random(model.n_j)) \
        if model.n_j else np.zeros(0)
    quat = quat_normalize(rng.standard_normal(4))
    return GeneralizedState(
        base_pos=rng.uniform(-1.0, 1.0, 3),
        base_quat=quat,
        q=q,
        base_lin_vel=vel_scale * rng.standard_normal(3),
        base_ang_vel=vel_scale * rng.standard_normal(3),
        qd=vel_scale * rng.standard_normal(model.n_j))
