"""Whole-body Cartesian impedance controller.

Each control tick assembles one convex QP over the stacked decision
vector

    xi = [udot (6 + n_j), ground reaction forces (3 per stance foot),
          swing slacks (3 per swing foot)]

whose cost trades base wrench tracking against arm acceleration
tracking, and whose constraints keep the solution physically
consistent (floating-base rows of the equations of motion), pin the
stance feet, relax the swing-foot task through bounded slacks, and
enforce friction pyramids plus acceleration and torque limits.  The
optimal accelerations and contact forces are then mapped to joint
torques through the actuated rows of the dynamics.

The base cost uses the DESIRED apparent inertia on the translational
rows (that substitution is what changes the closed-loop inertia) and
the robot's actual angular inertia block on the rotational rows,
where only a PD wrench is tracked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import RobotModel, GeneralizedState, FOOT_FRAMES, EE_FRAME
from .dynamics import KinematicsCache, rot_log, _skew
from .template import ImpedanceSettings
from .qp import (QpProblem, QpSolution, QpSettings, AdmmQpSolver,
                 OPTIMAL, kkt_residuals)


@dataclass(frozen=True)
class WbcConfig:
    """Controller tuning independent of the rendered impedance.

    The stock values live in the packaged configuration file, not
    here; tests and callers pass them explicitly.
    """

    weight_base: float              # base wrench tracking
    weight_arm: float               # arm acceleration tracking
    reg_accel: float                # regularization over udot
    reg_force: float                # regularization over contact forces
    slack_penalty: float
    friction_coeff: float
    normal_force_min: float         # N, "almost zero" unilateral bound
    normal_force_max: float
    accel_bound_horizon: float      # s, stop-before-limit horizon
    manipulability_min: float       # damping kicks in below this
    pinv_damping_max: float
    posture_kp: float
    posture_kd: float
    control_period: float
    qp: QpSettings = field(default_factory=QpSettings)

    def __post_init__(self):
        if min(self.weight_base, self.weight_arm) < 0.0:
            raise ValueError("tracking weights must be >= 0")
        if min(self.reg_accel, self.reg_force) <= 0.0:
            raise ValueError("regularization must be > 0")
        if self.friction_coeff <= 0.0:
            raise ValueError("friction coefficient must be > 0")
        if self.normal_force_min < 0.0:
            raise ValueError("normal force lower bound must be >= 0")
        if self.accel_bound_horizon <= 0.0:
            raise ValueError("acceleration bound horizon must be > 0")


@dataclass(frozen=True)
class WbcInput:
    """Everything one control tick reads. Immutable snapshot."""

    model: RobotModel
    state: GeneralizedState
    base_acc: np.ndarray            # measured linear base acc, world
    contacts: tuple                 # stance foot frame names, in order
    swing_acc_des: dict             # frame -> base-relative accel
    x_b_des: np.ndarray
    v_b_des: np.ndarray
    R_des: np.ndarray               # desired base orientation
    w_des: np.ndarray               # desired base angular velocity
    x_be_des: np.ndarray            # desired effector offset, world
    v_be_des: np.ndarray
    q_arm_des: np.ndarray
    f_ext: np.ndarray               # measured effector force, world

    def __post_init__(self):
        if len(self.contacts) == 0:
            raise ValueError("contact set must not be empty")
        order = [f for f in FOOT_FRAMES if f in self.contacts]
        if list(self.contacts) != order:
            raise ValueError("contacts must follow the canonical foot "
                             "order")
        swing = [f for f in FOOT_FRAMES if f not in self.contacts]
        if sorted(self.swing_acc_des) != sorted(swing):
            raise ValueError("swing references must cover exactly the "
                             "non-stance feet")

    @property
    def swing_feet(self) -> list:
        return [f for f in FOOT_FRAMES if f not in self.contacts]


@dataclass
class WbcOutput:
    tau_legs: np.ndarray
    tau_arm: np.ndarray
    udot: np.ndarray
    forces: np.ndarray              # stacked per stance foot, world
    slacks: np.ndarray
    status: str
    iterations: int
    residuals: object
    wrench_des: np.ndarray
    qdd_arm_des: np.ndarray
    realized_wrench: np.ndarray     # shaped-inertia times base accel
    max_violation: float
    violations: dict
    cost: float
    held: bool = False              # torques held from a previous tick


# ---------------------------------------------------------------------------
# individual control laws


def orientation_error(R_des: np.ndarray, R_act: np.ndarray) -> np.ndarray:
    """Rotation vector of R_des R_act^T (world frame), |e| <= pi."""
    return rot_log(np.asarray(R_des) @ np.asarray(R_act).T)


def desired_base_wrench(inp: WbcInput, settings: ImpedanceSettings,
                        cache: KinematicsCache) -> np.ndarray:
    """PD wrench on the base, including the arm-coupling spring.

    The arm spring acts on the base with the opposite sign of the
    base spring: stretching the effector offset beyond its setpoint
    pulls the base toward the effector.
    """
    st = inp.state
    x_ee = cache.frame_position(inp.model.frames[EE_FRAME])
    v_ee = cache.frame_velocity(inp.model.frames[EE_FRAME])
    x_be = x_ee - st.base_pos
    v_be = v_ee - st.base_lin_vel
    force = (settings.base_stiffness @ (inp.x_b_des - st.base_pos)
             + settings.base_damping @ (inp.v_b_des - st.base_lin_vel)
             + settings.arm_stiffness @ (x_be - inp.x_be_des)
             + settings.arm_damping @ (v_be - inp.v_be_des))
    e_r = orientation_error(inp.R_des, cache.R_base)
    torque = (settings.rot_damping @ (inp.w_des - st.base_ang_vel)
              + settings.rot_stiffness @ e_r)
    return np.concatenate([force, torque])


def damped_pinv(J: np.ndarray, M_arm: np.ndarray,
                cfg: WbcConfig) -> np.ndarray:
    """Inertia-weighted pseudo-inverse with manipulability damping.

    Below the manipulability threshold the damping rises smoothly to
    pinv_damping_max, keeping the inverse bounded at singularities.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    Minv_Jt = np.linalg.solve(M_arm, J.T)
    JJt = J @ Minv_Jt
    gram = J @ J.T
    det = np.linalg.det(gram)
    w = np.sqrt(det) if det > 0.0 else 0.0
    if w < cfg.manipulability_min:
        ratio = 1.0 - w / cfg.manipulability_min
        lam2 = (cfg.pinv_damping_max * ratio) ** 2
    else:
        lam2 = 0.0
    return Minv_Jt @ np.linalg.inv(JJt + lam2 * np.eye(J.shape[0]))


def _frozen_base_state(state: GeneralizedState) -> GeneralizedState:
    """Same joints, base pinned at the origin with zero twist.

    Frame quantities of this state are base-relative, expressed in
    base coordinates, with time derivatives taken at fixed base; this
    yields the limb-only Jacobians and drift terms of the swing and
    arm tasks.
    """
    return GeneralizedState(
        base_pos=np.zeros(3), base_quat=np.array([1.0, 0, 0, 0]),
        q=state.q, base_lin_vel=np.zeros(3),
        base_ang_vel=np.zeros(3), qd=state.qd)


def desired_arm_accel(inp: WbcInput, settings: ImpedanceSettings,
                      cfg: WbcConfig, cache: KinematicsCache,
                      frozen: KinematicsCache) -> np.ndarray:
    """Arm joint accelerations realizing the effector template force.

    Inverts the effector kinematics x_e = x_b + R_wb r(q_a): the
    commanded relative Cartesian acceleration (template spring-damper
    plus measured force, divided by the desired effector inertia,
    minus the measured base acceleration) is mapped through the
    damped inertia-weighted inverse of the base-frame arm Jacobian;
    a posture servo fills the null space.
    """
    model = inp.model
    st = inp.state
    cols = np.array(model.arm_dofs())
    joints = cols - 6                   # u columns -> joint indices
    qd_arm = st.qd[joints]
    ee = model.frames[EE_FRAME]

    J_a = frozen.frame_jacobian(ee, rows="lin")[:, cols]
    jd_qd = frozen.frame_jdot_u(ee, rows="lin")
    R_wb = cache.R_base
    R_bw = R_wb.T

    x_ee = cache.frame_position(ee)
    v_ee = cache.frame_velocity(ee)
    x_be = x_ee - st.base_pos
    v_be = v_ee - st.base_lin_vel
    f_cmd = (settings.arm_stiffness @ (inp.x_be_des - x_be)
             + settings.arm_damping @ (inp.v_be_des - v_be)
             + np.asarray(inp.f_ext, dtype=float))
    a_rel_world = np.linalg.solve(settings.arm_inertia, f_cmd) \
        - np.asarray(inp.base_acc, dtype=float)
    # base-frame transport term: d/dt(R_wb) applied to the arm's own
    # relative velocity
    spin = R_bw @ _skew(st.base_ang_vel) @ R_wb @ (J_a @ qd_arm)
    rhs = R_bw @ a_rel_world - jd_qd - spin

    M = cache.mass_matrix()
    M_arm = M[np.ix_(cols, cols)]
    J_pinv = damped_pinv(J_a, M_arm, cfg)
    n_a = len(cols)
    N_a = np.eye(n_a) - J_pinv @ J_a
    qdd_posture = cfg.posture_kp * (inp.q_arm_des - st.q[joints]) \
        - cfg.posture_kd * qd_arm
    return J_pinv @ rhs + N_a @ qdd_posture


def acceleration_bounds(q: np.ndarray, qd: np.ndarray,
                        q_min: np.ndarray, q_max: np.ndarray,
                        horizon: float) -> tuple[np.ndarray, np.ndarray]:
    """Acceleration box that can still stop at the position limits.

    Derived from the constant-deceleration stop q + horizon*qd +
    (horizon^2/2)*qdd staying inside [q_min, q_max]: both bounds are
    (2/horizon^2)(limit - q - horizon*qd).  At a limit with zero
    velocity the corresponding bound is exactly zero, and approaching
    velocity shrinks it further.
    """
    scale = 2.0 / horizon ** 2
    lo = scale * (q_min - q - horizon * qd)
    hi = scale * (q_max - q - horizon * qd)
    return lo, hi


# ---------------------------------------------------------------------------
# QP assembly


@dataclass(frozen=True)
class QpLayout:
    """Column/row bookkeeping of one assembled problem."""

    nv: int
    n_contact: int
    n_swing: int
    force_offset: int
    slack_offset: int
    n_vars: int
    eq_rows_consistency: slice
    eq_rows_stance: slice
    ineq_rows_swing: slice
    ineq_rows_friction: slice
    ineq_rows_accel: slice
    ineq_rows_torque: slice


def assemble_qp(inp: WbcInput, settings: ImpedanceSettings,
                cfg: WbcConfig, wrench_des: np.ndarray,
                qdd_arm_des: np.ndarray, cache: KinematicsCache,
                frozen: KinematicsCache
                ) -> tuple[QpProblem, QpLayout]:
    model = inp.model
    st = inp.state
    nv = model.nv
    n_j = model.n_j
    nc = len(inp.contacts)
    swing = inp.swing_feet
    nsw = len(swing)
    nf = 3 * nc
    ns = 3 * nsw
    n = nv + nf + ns
    f0 = nv
    s0 = nv + nf
    arm_cols = np.array(model.arm_dofs())

    M = cache.mass_matrix()
    h = cache.bias_vector()
    J_ee = cache.frame_jacobian(model.frames[EE_FRAME], rows="lin")
    jt_fe = J_ee.T @ np.asarray(inp.f_ext, dtype=float)

    # ---- cost -------------------------------------------------------------
    H = np.zeros((n, n))
    g = np.zeros(n)
    # base wrench rows: shaped translational inertia, actual rotational
    P = np.zeros((6, 6))
    P[:3, :3] = settings.base_inertia
    P[3:, 3:] = M[3:6, 3:6]
    H[:6, :6] += 2.0 * cfg.weight_base * (P.T @ P)
    g[:6] += -2.0 * cfg.weight_base * (P.T @ wrench_des)
    # arm acceleration rows
    H[arm_cols, arm_cols] += 2.0 * cfg.weight_arm
    g[arm_cols] += -2.0 * cfg.weight_arm * qdd_arm_des
    # regularization and slack penalty
    idx = np.arange(n)
    H[idx[:nv], idx[:nv]] += 2.0 * cfg.reg_accel
    H[idx[f0:s0], idx[f0:s0]] += 2.0 * cfg.reg_force
    H[idx[s0:], idx[s0:]] += 2.0 * cfg.slack_penalty

    # ---- stance Jacobians ---------------------------------------------------
    J_st = np.zeros((nf, nv))
    jd_st = np.zeros(nf)
    for i, foot in enumerate(inp.contacts):
        fr = model.frames[foot]
        J_st[3 * i:3 * i + 3] = cache.frame_jacobian(fr, rows="lin")
        jd_st[3 * i:3 * i + 3] = cache.frame_jdot_u(fr, rows="lin")

    # ---- equalities ---------------------------------------------------------
    me = 6 + nf
    A = np.zeros((me, n))
    b = np.zeros(me)
    A[:6, :nv] = M[:6]
    A[:6, f0:s0] = -J_st[:, :6].T
    b[:6] = -h[:6] + jt_fe[:6]
    A[6:, :nv] = J_st
    b[6:] = -jd_st

    # ---- inequalities ---------------------------------------------------------
    rows_swing = 3 * ns                  # two relaxed sides + positivity
    rows_fric = 6 * nc
    rows_lim = n_j
    mi = rows_swing + rows_fric + 2 * rows_lim
    C = np.zeros((mi, n))
    lo = np.full(mi, -np.inf)
    hi = np.full(mi, np.inf)
    r = 0

    # swing task, relaxed: |J_sw udot + jdot - add| <= s, s >= 0
    for k, foot in enumerate(swing):
        fr = model.frames[foot]
        J_sw = frozen.frame_jacobian(fr, rows="lin")
        # the base-relative task depends only on leg joints; base
        # columns of the frozen Jacobian are an expression artifact
        J_q = np.zeros((3, nv))
        J_q[:, 6:] = J_sw[:, 6:]
        b_sw = np.asarray(inp.swing_acc_des[foot], dtype=float) \
            - frozen.frame_jdot_u(fr, rows="lin")
        sc = s0 + 3 * k
        C[r:r + 3, :nv] = J_q
        C[r:r + 3, sc:sc + 3] = -np.eye(3)
        hi[r:r + 3] = b_sw
        r += 3
        C[r:r + 3, :nv] = J_q
        C[r:r + 3, sc:sc + 3] = np.eye(3)
        lo[r:r + 3] = b_sw
        r += 3
        C[r:r + 3, sc:sc + 3] = np.eye(3)
        lo[r:r + 3] = 0.0
        r += 3
    swing_slice = slice(0, r)

    # friction pyramid, faces aligned with the world axes
    mu = cfg.friction_coeff
    fric_start = r
    for i in range(nc):
        c0 = f0 + 3 * i
        for sx, sy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            C[r, c0] = sx
            C[r, c0 + 1] = sy
            C[r, c0 + 2] = -mu
            hi[r] = 0.0
            r += 1
        C[r, c0 + 2] = 1.0
        lo[r] = cfg.normal_force_min
        r += 1
        C[r, c0 + 2] = 1.0
        hi[r] = cfg.normal_force_max
        r += 1
    fric_slice = slice(fric_start, r)

    # joint acceleration box
    q_min, q_max = model.joint_limits()
    a_lo, a_hi = acceleration_bounds(st.q, st.qd, q_min, q_max,
                                     cfg.accel_bound_horizon)
    acc_start = r
    C[r:r + n_j, 6:nv] = np.eye(n_j)
    lo[r:r + n_j] = a_lo
    hi[r:r + n_j] = a_hi
    r += n_j
    acc_slice = slice(acc_start, r)

    # torque box through the actuated dynamics rows
    t_min, t_max = model.torque_limits()
    tq_start = r
    C[r:r + n_j, :nv] = M[6:]
    C[r:r + n_j, f0:s0] = -J_st[:, 6:].T
    shift = -h[6:] + jt_fe[6:]
    lo[r:r + n_j] = t_min + shift
    hi[r:r + n_j] = t_max + shift
    r += n_j
    tq_slice = slice(tq_start, r)
    assert r == mi

    layout = QpLayout(
        nv=nv, n_contact=nc, n_swing=nsw, force_offset=f0,
        slack_offset=s0, n_vars=n,
        eq_rows_consistency=slice(0, 6),
        eq_rows_stance=slice(6, 6 + nf),
        ineq_rows_swing=swing_slice,
        ineq_rows_friction=fric_slice,
        ineq_rows_accel=acc_slice,
        ineq_rows_torque=tq_slice)
    return QpProblem(H=H, g=g, A=A, b=b, C=C, d_lo=lo, d_hi=hi), layout


def map_torques(model: RobotModel, udot: np.ndarray,
                forces: np.ndarray, contacts: tuple,
                f_ext: np.ndarray, cache: KinematicsCache
                ) -> tuple[np.ndarray, np.ndarray]:
    """Joint torques realizing (udot, forces) under the full dynamics."""
    M = cache.mass_matrix()
    h = cache.bias_vector()
    gen = M @ udot + h
    for i, foot in enumerate(contacts):
        J = cache.frame_jacobian(model.frames[foot], rows="lin")
        gen -= J.T @ forces[3 * i:3 * i + 3]
    J_ee = cache.frame_jacobian(model.frames[EE_FRAME], rows="lin")
    gen -= J_ee.T @ np.asarray(f_ext, dtype=float)
    tau = gen[6:]
    n_legs = model.nv - 6 - model.n_a
    return tau[:n_legs], tau[n_legs:]


def constraint_violations(p: QpProblem, layout: QpLayout,
                          x: np.ndarray) -> dict:
    """Worst signed violation per constraint group (positive = broken)."""
    out = {}
    eq = p.A @ x - p.b
    out["consistency"] = float(np.max(np.abs(
        eq[layout.eq_rows_consistency]), initial=0.0))
    out["stance"] = float(np.max(np.abs(eq[layout.eq_rows_stance]),
                                 initial=0.0))
    Cx = p.C @ x
    over = np.maximum(Cx - p.d_hi, 0.0) + np.maximum(p.d_lo - Cx, 0.0)
    for name, sl in (("swing", layout.ineq_rows_swing),
                     ("friction", layout.ineq_rows_friction),
                     ("joint_accel", layout.ineq_rows_accel),
                     ("torque", layout.ineq_rows_torque)):
        out[name] = float(np.max(over[sl], initial=0.0))
    return out


# ---------------------------------------------------------------------------
# slack condensation
#
# Each swing slack component appears in exactly three inequality rows
# (task upper side, task lower side, non-negativity) and one diagonal
# cost entry.  Minimizing over the slack alone gives s = |J udot - b|,
# so the slack block folds exactly into a quadratic cost term on the
# remaining variables.  Solving that reduced problem is dramatically
# better conditioned for an operator-splitting solver: the task
# magnitude moves out of the constraint bounds (which equilibration
# cannot touch) and into the cost gradient (which it can).  The full
# problem's solution, multipliers included, is then reconstructed in
# closed form, so the reported residuals are still measured against
# the problem that was assembled.


def condense_swing_slack(p: QpProblem, layout: QpLayout
                         ) -> tuple[QpProblem, tuple]:
    """Fold the swing slacks into the cost; returns (reduced, info)."""
    nk = layout.slack_offset
    if layout.n_swing == 0:
        return p, ()
    if np.any(p.g[nk:] != 0.0) or np.any(p.A[:, nk:] != 0.0):
        raise ValueError("unexpected slack coupling")
    keep = np.arange(nk)
    sw = layout.ineq_rows_swing
    drop = np.zeros(p.m_ineq, dtype=bool)
    drop[sw] = True
    H = p.H[np.ix_(keep, keep)].copy()
    g = p.g[:nk].copy()
    tasks = []
    for k in range(layout.n_swing):
        r0 = sw.start + 9 * k
        J = p.C[r0:r0 + 3, :nk]
        b = p.d_hi[r0:r0 + 3]
        w2 = p.H[nk + 3 * k, nk + 3 * k]      # quadratic coefficient, 2*w_s
        H += w2 * J.T @ J
        g -= w2 * J.T @ b
        tasks.append((J, b, w2))
    H = 0.5 * (H + H.T)
    red = QpProblem(H=H, g=g, A=p.A[:, keep], b=p.b,
                    C=p.C[~drop][:, keep],
                    d_lo=p.d_lo[~drop], d_hi=p.d_hi[~drop])
    return red, (tasks, drop)


def expand_condensed(p: QpProblem, layout: QpLayout, sol: QpSolution,
                     info: tuple) -> QpSolution:
    """Rebuild the full-problem solution from a reduced-problem one.

    The slack value is the task miss itself and its multipliers follow
    from stationarity: the side the miss leaves active carries a
    multiplier of (2*w_s)*s, the other side and the non-negativity row
    carry zero.
    """
    if not info:
        return sol
    tasks, drop = info
    nk = layout.slack_offset
    x = np.zeros(p.n)
    x[:nk] = sol.x
    y_in = np.zeros(p.m_ineq)
    y_in[~drop] = sol.y_ineq
    sw = layout.ineq_rows_swing
    for k, (J, b, w2) in enumerate(tasks):
        r0 = sw.start + 9 * k
        gap = J @ sol.x - b
        s = np.abs(gap)
        x[nk + 3 * k:nk + 3 * k + 3] = s
        up = gap > 0.0
        y_in[r0:r0 + 3][up] = w2 * s[up]
        y_in[r0 + 3:r0 + 6][~up] = -w2 * s[~up]
    full = QpSolution(x=x, y_eq=sol.y_eq, y_ineq=y_in,
                      status=sol.status, iterations=sol.iterations,
                      residuals=sol.residuals, polished=sol.polished)
    full.residuals = kkt_residuals(p, full)
    return full


def solve_condensed(p: QpProblem, layout: QpLayout,
                    solver: AdmmQpSolver) -> QpSolution:
    """Solve an assembled problem through the slack condensation."""
    red, info = condense_swing_slack(p, layout)
    sol = solver.solve(red)
    return expand_condensed(p, layout, sol, info)


class WholeBodyController:
    """Stateful per-simulation controller wrapper.

    Owns a warm-started QP solver (reset whenever the contact set
    changes, since the decision vector is re-laid-out) and holds the
    previous torques to fall back on if a solve fails.
    """

    def __init__(self, model: RobotModel, settings: ImpedanceSettings,
                 cfg: WbcConfig):
        self.model = model
        self.settings = settings
        self.cfg = cfg
        self.solver = AdmmQpSolver(cfg.qp)
        self._signature = None
        self._last_tau = None

    def tick(self, inp: WbcInput,
             cache: KinematicsCache | None = None) -> WbcOutput:
        if cache is None:
            cache = KinematicsCache.from_state(self.model, inp.state)
        frozen = KinematicsCache.from_state(
            self.model, _frozen_base_state(inp.state))

        wrench = desired_base_wrench(inp, self.settings, cache)
        qdd_arm = desired_arm_accel(inp, self.settings, self.cfg,
                                    cache, frozen)
        problem, layout = assemble_qp(inp, self.settings, self.cfg,
                                      wrench, qdd_arm, cache, frozen)
        if inp.contacts != self._signature:
            self.solver.reset()
            self._signature = inp.contacts
        sol = solve_condensed(problem, layout, self.solver)

        nv = layout.nv
        udot = sol.x[:nv]
        forces = sol.x[layout.force_offset:layout.slack_offset]
        slacks = sol.x[layout.slack_offset:]
        viol = constraint_violations(problem, layout, sol.x)
        P = np.zeros((6, 6))
        P[:3, :3] = self.settings.base_inertia
        P[3:, 3:] = cache.mass_matrix()[3:6, 3:6]
        realized = P @ udot[:6]

        held = sol.status != OPTIMAL and self._last_tau is not None
        if held:
            tau_legs, tau_arm = self._last_tau
        else:
            tau_legs, tau_arm = map_torques(
                self.model, udot, forces, inp.contacts, inp.f_ext,
                cache)
            if sol.status == OPTIMAL:
                self._last_tau = (tau_legs, tau_arm)
        return WbcOutput(
            tau_legs=tau_legs, tau_arm=tau_arm, udot=udot,
            forces=forces, slacks=slacks, status=sol.status,
            iterations=sol.iterations, residuals=sol.residuals,
            wrench_des=wrench, qdd_arm_des=qdd_arm,
            realized_wrench=realized,
            max_violation=max(viol.values()), violations=viol,
            cost=problem.objective(sol.x), held=held)
