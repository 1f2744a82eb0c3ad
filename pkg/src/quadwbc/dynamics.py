"""Floating-base rigid-body dynamics on the model tree.

All quantities are expressed in world coordinates.  6-vectors stack as
[linear, angular].  Spatial motion vectors are referenced to the world
origin: a body with angular velocity w whose body-fixed point at the
world origin moves at v_O has spatial velocity [v_O, w].  Spatial force
vectors pair with that: [force, moment about the world origin].

The generalized velocity is u = [v_base, w_base, qd]: world linear and
angular velocity of the base link followed by the joint rates.  Note the
base entries are the velocity of the base-frame origin, not of the
world origin, so the base columns of every Jacobian carry the lever arm
of the base position.

The mass matrix comes from a composite-rigid-body pass, the bias from a
recursive Newton-Euler pass; both use the same cached link kinematics.
"""

from __future__ import annotations

import math

import numpy as np

from .model import RobotModel, GeneralizedState, Frame

GRAVITY = np.array([0.0, 0.0, -9.81])


# ---------------------------------------------------------------------------
# quaternion / rotation helpers (w, x, y, z)

def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)]])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw])


def quat_exp(v: np.ndarray) -> np.ndarray:
    """Quaternion for a rotation vector v (angle * axis)."""
    angle = math.sqrt(float(v @ v))
    if angle < 1e-12:
        # second-order series keeps the small-step integrator smooth
        half = 0.5 * v
        return np.array([1.0 - 0.125 * float(v @ v), half[0], half[1],
                         half[2]])
    axis = v / angle
    s = math.sin(0.5 * angle)
    return np.array([math.cos(0.5 * angle),
                     s * axis[0], s * axis[1], s * axis[2]])


def rot_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R; magnitude bounded by pi."""
    c = 0.5 * (np.trace(R) - 1.0)
    c = min(1.0, max(-1.0, c))
    angle = math.acos(c)
    if angle < 1e-9:
        # first order: R ~ I + skew(v)
        return 0.5 * np.array([R[2, 1] - R[1, 2],
                               R[0, 2] - R[2, 0],
                               R[1, 0] - R[0, 1]])
    if angle > math.pi - 1e-6:
        # near pi the antisymmetric part degenerates; recover the axis
        # from the dominant column of (R + I)/2 ~ axis axis^T
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / math.sqrt(max(B[k, k], 1e-12))
        axis = axis / np.linalg.norm(axis)
        # fix the sign using the antisymmetric residue
        v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0],
                      R[1, 0] - R[0, 1]])
        if float(v @ axis) < 0.0:
            axis = -axis
        return angle * axis
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return (0.5 * angle / math.sin(angle)) * v


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross spends most of its time on axis bookkeeping at this
    # size; the explicit form is ~10x faster and hot in the physics
    # loop
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def _cross_motion(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Spatial cross product of two motion vectors [v, w]."""
    av, aw = a[:3], a[3:]
    bv, bw = b[:3], b[3:]
    out = np.empty(6)
    out[:3] = _cross3(aw, bv) + _cross3(av, bw)
    out[3:] = _cross3(aw, bw)
    return out


def _cross_force(a: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Spatial cross product of a motion vector with a force vector."""
    av, aw = a[:3], a[3:]
    F, N = f[:3], f[3:]
    out = np.empty(6)
    out[:3] = _cross3(aw, F)
    out[3:] = _cross3(aw, N) + _cross3(av, F)
    return out


# ---------------------------------------------------------------------------


class KinematicsCache:
    """Per-link world-frame kinematics for one (model, state) pair.

    Built once and shared by the mass matrix, bias, Jacobian and
    velocity-product queries of a control or physics step.
    """

    __slots__ = ("model", "base_pos", "R_base", "p", "R", "V", "A0",
                 "com_w", "jpos", "jaxis", "phi", "_I6", "_M", "_h",
                 "_h_gravity")

    def __init__(self, model: RobotModel, base_pos, base_quat, q,
                 base_lin_vel, base_ang_vel, qd):
        self.model = model
        nl = len(model.links)
        self.p = np.empty((nl, 3))          # link frame origins, world
        self.R = np.empty((nl, 3, 3))       # link orientation, world
        self.V = np.empty((nl, 6))          # spatial velocity at origin
        self.A0 = np.empty((nl, 6))         # spatial accel with udot = 0
        self.com_w = np.empty((nl, 3))      # com positions, world
        self.jpos = np.empty((nl, 3))       # joint pivot, world (revolute)
        self.jaxis = np.empty((nl, 3))      # joint axis, world (revolute)
        self.phi = np.empty((nl, 6))        # joint motion column (revolute)
        self._I6 = None
        self._M = None
        self._h = None
        self._h_gravity = None

        base_pos = np.asarray(base_pos, dtype=float)
        self.base_pos = base_pos
        R0 = quat_to_rot(np.asarray(base_quat, dtype=float))
        self.R_base = R0
        vb = np.asarray(base_lin_vel, dtype=float)
        wb = np.asarray(base_ang_vel, dtype=float)

        self.p[0] = base_pos
        self.R[0] = R0
        self.V[0, :3] = vb - _cross3(wb, base_pos)
        self.V[0, 3:] = wb
        # coordinate derivative of [v_base - w x p_base, w] with udot = 0
        self.A0[0, :3] = -_cross3(wb, vb)
        self.A0[0, 3:] = 0.0
        self.com_w[0] = base_pos + R0 @ model.links[0].com

        links = model.links
        for i in range(1, nl):
            lk = links[i]
            par = lk.parent
            Rp = self.R[par]
            pj = self.p[par] + Rp @ lk.origin
            a = Rp @ lk.axis
            qi = q[lk.dof]
            qdi = qd[lk.dof]
            # rotation about the world-frame axis a by qi
            ca, sa = math.cos(qi), math.sin(qi)
            K = _skew(a)
            Rj = np.eye(3) + sa * K + (1.0 - ca) * (K @ K)
            Ri = Rj @ Rp
            self.p[i] = pj
            self.R[i] = Ri
            self.jpos[i] = pj
            self.jaxis[i] = a
            phi = np.empty(6)
            phi[:3] = _cross3(pj, a)
            phi[3:] = a
            self.phi[i] = phi
            Vi = self.V[par] + phi * qdi
            self.V[i] = Vi
            self.A0[i] = self.A0[par] + _cross_motion(Vi, phi * qdi)
            self.com_w[i] = pj + Ri @ lk.com

    @classmethod
    def from_state(cls, model: RobotModel,
                   state: GeneralizedState) -> "KinematicsCache":
        return cls(model, state.base_pos, state.base_quat, state.q,
                   state.base_lin_vel, state.base_ang_vel, state.qd)

    # -- spatial inertia ----------------------------------------------------

    def _spatial_inertias(self) -> np.ndarray:
        """6x6 spatial inertia of each link about the world origin."""
        if self._I6 is not None:
            return self._I6
        links = self.model.links
        nl = len(links)
        I6 = np.empty((nl, 6, 6))
        for i, lk in enumerate(links):
            m = lk.mass
            c = self.com_w[i]
            Ic = self.R[i] @ lk.inertia @ self.R[i].T
            cx = _skew(c)
            I6[i, :3, :3] = m * np.eye(3)
            I6[i, :3, 3:] = m * cx.T
            I6[i, 3:, :3] = m * cx
            I6[i, 3:, 3:] = Ic + m * (cx @ cx.T)
        self._I6 = I6
        return I6

    def _base_columns(self) -> np.ndarray:
        """6x6 map from [v_base, w_base] to the base spatial velocity."""
        B = np.eye(6)
        B[:3, 3:] = _skew(self.base_pos)   # v_O = v_b + p_b x w
        return B

    # -- mass matrix / bias ---------------------------------------------------

    def mass_matrix(self) -> np.ndarray:
        """Composite-rigid-body mass matrix, symmetric positive definite."""
        if self._M is not None:
            return self._M
        model = self.model
        links = model.links
        nl = len(links)
        nv = model.nv
        Ic = self._spatial_inertias().copy()
        for i in range(nl - 1, 0, -1):
            Ic[links[i].parent] += Ic[i]

        M = np.zeros((nv, nv))
        B = self._base_columns()
        M[:6, :6] = B.T @ Ic[0] @ B
        for i in range(1, nl):
            lk = links[i]
            F = Ic[i] @ self.phi[i]
            col = 6 + lk.dof
            M[col, col] = float(self.phi[i] @ F)
            # walk up through the ancestor joints
            for d in lk.path_dofs[:-1]:
                Mij = float(self.phi[self._dof_link(d)] @ F)
                M[col, 6 + d] = Mij
                M[6 + d, col] = Mij
            Mb = B.T @ F
            M[col, :6] = Mb
            M[:6, col] = Mb
        self._M = M
        return M

    @staticmethod
    def _dof_link(dof: int) -> int:
        # the parser numbers dofs in link declaration order, so the link
        # carrying dof d is always link d + 1
        return 1 + dof

    def bias_vector(self, gravity: np.ndarray = GRAVITY) -> np.ndarray:
        """Velocity-product plus gravity generalized forces h(q, u).

        Satisfies M(q) udot + h = (generalized applied forces); with zero
        velocity it reduces to the gravity wrench.
        """
        if self._h is not None and np.array_equal(self._h_gravity, gravity):
            return self._h
        model = self.model
        links = model.links
        nl = len(links)
        I6 = self._spatial_inertias()

        # gravity enters as a uniform upward base acceleration
        g6 = np.zeros(6)
        g6[:3] = gravity
        f = np.empty((nl, 6))
        for i in range(nl):
            Ai = self.A0[i] - g6
            IV = I6[i] @ self.V[i]
            f[i] = I6[i] @ Ai + _cross_force(self.V[i], IV)
        for i in range(nl - 1, 0, -1):
            f[links[i].parent] += f[i]

        h = np.zeros(model.nv)
        h[:6] = self._base_columns().T @ f[0]
        for i in range(1, nl):
            h[6 + links[i].dof] = float(self.phi[i] @ f[i])
        self._h = h
        self._h_gravity = np.array(gravity)
        return h

    # -- frames ---------------------------------------------------------------

    def frame_position(self, frame: Frame) -> np.ndarray:
        return self.p[frame.link] + self.R[frame.link] @ frame.offset

    def frame_velocity(self, frame: Frame) -> np.ndarray:
        """World linear velocity of the frame point."""
        x = self.frame_position(frame)
        V = self.V[frame.link]
        return V[:3] + _cross3(V[3:], x)

    def frame_jacobian(self, frame: Frame, rows: str = "full") -> np.ndarray:
        """World-frame Jacobian of the frame point.

        rows="full" gives 6 x nv with [linear, angular] rows; rows="lin"
        gives the 3 x nv translational part.  Columns of joints that are
        not on the chain to the frame are exactly zero.
        """
        model = self.model
        x = self.frame_position(frame)
        lin = np.zeros((3, model.nv))
        ang = np.zeros((3, model.nv))
        lin[:, :3] = np.eye(3)
        r = x - self.base_pos
        lin[:, 3:6] = _skew(r).T            # e x (x - p_base) per column
        ang[:, 3:6] = np.eye(3)
        link = model.links[frame.link]
        for d in link.path_dofs:
            li = self._dof_link(d)
            a = self.jaxis[li]
            lin[:, 6 + d] = _cross3(a, x - self.jpos[li])
            ang[:, 6 + d] = a
        if rows == "lin":
            return lin
        return np.vstack([lin, ang])

    def frame_jdot_u(self, frame: Frame, rows: str = "full") -> np.ndarray:
        """Product d/dt(J) u: frame acceleration with udot = 0.

        Translational rows are the material acceleration of the frame
        point (centripetal terms included); angular rows are the angular
        acceleration of the link, both in world coordinates.
        """
        x = self.frame_position(frame)
        V = self.V[frame.link]
        A = self.A0[frame.link]
        w = V[3:]
        a_lin = A[:3] + _cross3(A[3:], x) + _cross3(w, V[:3]
                                                       + _cross3(w, x))
        if rows == "lin":
            return a_lin
        return np.concatenate([a_lin, A[3:]])


# ---------------------------------------------------------------------------
# module-level operations (pure functions of model and state)


def mass_matrix(model: RobotModel, state: GeneralizedState) -> np.ndarray:
    return KinematicsCache.from_state(model, state).mass_matrix()


def bias_vector(model: RobotModel, state: GeneralizedState,
                gravity: np.ndarray = GRAVITY) -> np.ndarray:
    return KinematicsCache.from_state(model, state).bias_vector(gravity)


def frame_jacobian(model: RobotModel, state: GeneralizedState, frame: str,
                   rows: str = "full") -> np.ndarray:
    cache = KinematicsCache.from_state(model, state)
    return cache.frame_jacobian(model.frames[frame], rows)


def frame_jdot_u(model: RobotModel, state: GeneralizedState, frame: str,
                 rows: str = "full") -> np.ndarray:
    cache = KinematicsCache.from_state(model, state)
    return cache.frame_jdot_u(model.frames[frame], rows)


def frame_position(model: RobotModel, state: GeneralizedState,
                   frame: str) -> np.ndarray:
    cache = KinematicsCache.from_state(model, state)
    return cache.frame_position(model.frames[frame])


def frame_velocity(model: RobotModel, state: GeneralizedState,
                   frame: str) -> np.ndarray:
    cache = KinematicsCache.from_state(model, state)
    return cache.frame_velocity(model.frames[frame])


def forward_dynamics(model: RobotModel, state: GeneralizedState,
                     tau: np.ndarray,
                     external: list[tuple[str, np.ndarray]] | None = None,
                     gravity: np.ndarray = GRAVITY,
                     cache: KinematicsCache | None = None) -> np.ndarray:
    """Generalized acceleration under joint torques and point forces.

    `tau` has one entry per revolute joint (the base is unactuated).
    `external` lists (frame name, world force) pairs applied at frame
    points.  Solves M udot = S tau + sum J^T F - h densely; the model
    sizes here stay small enough that sparsity would buy nothing.
    """
    if cache is None:
        cache = KinematicsCache.from_state(model, state)
    M = cache.mass_matrix()
    h = cache.bias_vector(gravity)
    rhs = -h
    rhs[6:] = rhs[6:] + np.asarray(tau, dtype=float)
    if external:
        for name, F in external:
            J = cache.frame_jacobian(model.frames[name], rows="lin")
            rhs = rhs + J.T @ np.asarray(F, dtype=float)
    return np.linalg.solve(M, rhs)


def kinetic_energy(model: RobotModel, state: GeneralizedState) -> float:
    cache = KinematicsCache.from_state(model, state)
    u = state.u
    return 0.5 * float(u @ cache.mass_matrix() @ u)


def integrate_state(model: RobotModel, state: GeneralizedState,
                    udot: np.ndarray, dt: float) -> GeneralizedState:
    """Semi-implicit Euler step: velocities first, then poses.

    The quaternion advances along the exponential of the (updated) world
    angular velocity and is renormalized, so the unit-norm invariant
    cannot drift.
    """
    u = state.u + dt * np.asarray(udot, dtype=float)
    vb, wb, qd = u[:3], u[3:6], u[6:]
    quat = quat_mul(quat_exp(dt * wb), state.base_quat)
    from .model import quat_normalize
    return GeneralizedState(
        base_pos=state.base_pos + dt * vb,
        base_quat=quat_normalize(quat),
        q=state.q + dt * qd,
        base_lin_vel=vb, base_ang_vel=wb, qd=qd)
