"""Compliant-ground plant, force profiles and the simulation loop.

The plant integrates the same rigid-body model the controller uses,
with semi-implicit Euler at a fixed physics rate.  Ground contact is a
unilateral spring-damper normal plus velocity-regularized Coulomb
friction; the plant cone must be no tighter than the one the
controller plans with, otherwise stance forces the optimizer considers
safe would slip.  Torques are held between control ticks.  Alongside
the plant, the reference template is co-integrated under the very
force samples applied to the end effector, so every log row carries
the behaviour the controller was asked to render next to the behaviour
it achieved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (RobotModel, GeneralizedState, FOOT_FRAMES, EE_FRAME)
from .dynamics import (KinematicsCache, forward_dynamics, integrate_state,
                       frame_position, quat_to_rot)
from .template import ImpedanceSettings, TemplateState
from .gait import GaitParams, contact_state, swing_phase, swing_reference, \
    foothold
from .qp import OPTIMAL
from .wbc import WbcInput

DEFAULT_PHYSICS_DT = 2.5e-4
DEFAULT_CONTROL_DT = 2.5e-3

# consecutive failed control solves tolerated before giving up
_MAX_BAD_TICKS = 20
# generalized velocity magnitude treated as numerical blow-up
_VEL_LIMIT = 1e4


class SimulationError(RuntimeError):
    """Simulation abort; `time` is the simulated instant of detection."""

    def __init__(self, msg: str, time: float):
        super().__init__(msg)
        self.time = time


class SimulationDiverged(SimulationError):
    pass


class ControlFailure(SimulationError):
    pass


# ---------------------------------------------------------------------------
# ground model


@dataclass(frozen=True)
class ContactParams:
    """Penalty ground: stiff spring-damper normal, regularized friction.

    The defaults penetrate about 3 mm under the robot's weight.  The
    friction coefficient is deliberately above the controller's planning
    cone so that feasible plans cannot slip on the plant.
    """

    stiffness: float = 1e5          # N/m
    damping: float = 1000.0         # N s/m
    friction_coeff: float = 0.9
    slip_velocity: float = 1e-3     # m/s, Coulomb regularization knee
    ground_height: float = 0.0

    def __post_init__(self):
        if self.stiffness <= 0.0 or self.damping <= 0.0:
            raise ValueError("contact stiffness and damping must be > 0")
        if self.friction_coeff <= 0.0:
            raise ValueError("plant friction coefficient must be > 0")
        if self.slip_velocity <= 0.0:
            raise ValueError("slip regularization velocity must be > 0")


def ground_contact_force(pos: np.ndarray, vel: np.ndarray,
                         params: ContactParams) -> np.ndarray:
    """World force the ground applies to a point at (pos, vel).

    Zero without penetration.  The normal component is clamped at zero
    so the ground never pulls, and friction vanishes with it.  Below
    the regularization velocity the tangential force ramps linearly
    through zero instead of switching sign discontinuously.
    """
    depth = params.ground_height - pos[2]
    if depth <= 0.0:
        return np.zeros(3)
    normal = params.stiffness * depth - params.damping * vel[2]
    if normal <= 0.0:
        return np.zeros(3)
    slip = math.hypot(vel[0], vel[1])
    scale = -params.friction_coeff * normal / max(slip,
                                                  params.slip_velocity)
    return np.array([scale * vel[0], scale * vel[1], normal])


# ---------------------------------------------------------------------------
# external force profiles


@dataclass(frozen=True)
class ForceProfile:
    """Time-dependent external force at the end effector.

    Kinds: "zero"; "step" (off until onset, constant after); "chirp"
    (linear frequency sweep from freq_start to freq_end over duration,
    off afterwards).  `direction` is stored normalized.
    """

    kind: str
    direction: np.ndarray = field(default_factory=lambda: np.zeros(3))
    magnitude: float = 0.0
    onset: float = 0.0
    freq_start: float = 0.0
    freq_end: float = 0.0
    duration: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "step", "chirp"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (3,):
            raise ValueError("direction must be a 3-vector")
        if self.kind != "zero":
            n = np.linalg.norm(d)
            if n == 0.0:
                raise ValueError("direction must be non-zero")
            d = d / n
        if self.magnitude < 0.0:
            raise ValueError("magnitude must be >= 0")
        if self.onset < 0.0:
            raise ValueError("onset must be >= 0")
        if self.kind == "chirp":
            if self.duration <= 0.0:
                raise ValueError("chirp duration must be > 0")
            if not 0.0 <= self.freq_start <= self.freq_end:
                raise ValueError("chirp needs 0 <= freq_start <= freq_end")
        d.setflags(write=False)
        object.__setattr__(self, "direction", d)

    @staticmethod
    def zero() -> "ForceProfile":
        return ForceProfile(kind="zero")

    @staticmethod
    def step(magnitude: float, direction,
             onset: float = 0.0) -> "ForceProfile":
        return ForceProfile(kind="step", direction=direction,
                            magnitude=magnitude, onset=onset)

    @staticmethod
    def chirp(amplitude: float, freq_start: float, freq_end: float,
              duration: float, direction) -> "ForceProfile":
        return ForceProfile(kind="chirp", direction=direction,
                            magnitude=amplitude, freq_start=freq_start,
                            freq_end=freq_end, duration=duration)


def eval_profile(profile: ForceProfile, t: float) -> np.ndarray:
    """Force vector of `profile` at time t >= 0."""
    if t < 0.0:
        raise ValueError("profile time must be >= 0")
    if profile.kind == "zero":
        return np.zeros(3)
    if profile.kind == "step":
        if t < profile.onset:
            return np.zeros(3)
        return profile.magnitude * profile.direction
    if t > profile.duration:
        return np.zeros(3)
    # linear sweep: instantaneous frequency f0 + (f1-f0) t / T, whose
    # integral gives the phase below
    f0, f1, T = profile.freq_start, profile.freq_end, profile.duration
    phase = 2.0 * math.pi * (f0 + (f1 - f0) * t / (2.0 * T)) * t
    return profile.magnitude * math.sin(phase) * profile.direction


# ---------------------------------------------------------------------------
# plant stepping


def _contact_forces(model: RobotModel, cache: KinematicsCache,
                    contact: ContactParams) -> np.ndarray:
    out = np.zeros((4, 3))
    for i, foot in enumerate(FOOT_FRAMES):
        fr = model.frames[foot]
        out[i] = ground_contact_force(cache.frame_position(fr),
                                      cache.frame_velocity(fr), contact)
    return out


def _advance(model: RobotModel, state: GeneralizedState, tau: np.ndarray,
             f_ext: np.ndarray, contact: ContactParams, dt: float,
             cache: KinematicsCache):
    forces = _contact_forces(model, cache, contact)
    ext = [(foot, forces[i]) for i, foot in enumerate(FOOT_FRAMES)
           if forces[i, 2] > 0.0]
    fe = np.asarray(f_ext, dtype=float)
    if np.any(fe != 0.0):
        ext.append((EE_FRAME, fe))
    udot = forward_dynamics(model, state, tau, external=ext, cache=cache)
    return integrate_state(model, state, udot, dt), forces, udot


def physics_step(model: RobotModel, state: GeneralizedState,
                 tau: np.ndarray, f_ext: np.ndarray,
                 contact: ContactParams, dt: float,
                 cache: KinematicsCache | None = None
                 ) -> tuple[GeneralizedState, np.ndarray]:
    """One semi-implicit Euler step; returns (next state, foot forces).

    Foot forces are stacked (4, 3) in canonical foot order, evaluated
    at the pre-step state, i.e. the forces this step applied.
    """
    if cache is None:
        cache = KinematicsCache.from_state(model, state)
    nxt, forces, _ = _advance(model, state, tau, f_ext, contact, dt, cache)
    return nxt, forces


def standing_start(model: RobotModel, contact: ContactParams,
                   base_xy=(0.0, 0.0)) -> GeneralizedState:
    """Nominal stance with feet pre-penetrated to carry the weight.

    The base height is chosen so each foot spring already pushes a
    quarter of the total weight; starting exactly on the surface would
    instead open with a drop of several millimetres and a thud.
    """
    q = model.nominal_q()
    probe = GeneralizedState.rest(model, q=q)
    cache = KinematicsCache.from_state(model, probe)
    foot_z = min(cache.frame_position(model.frames[f])[2]
                 for f in FOOT_FRAMES)
    weight = cache.mass_matrix()[0, 0] * 9.81
    depth = weight / (4.0 * contact.stiffness)
    base_z = contact.ground_height - foot_z - depth
    return GeneralizedState.rest(
        model, base_pos=[base_xy[0], base_xy[1], base_z], q=q)


# ---------------------------------------------------------------------------
# gait execution


class GaitRunner:
    """Turns the gait clock into per-tick contact sets and swing targets.

    Swing references are planned in base coordinates: the foot position
    is snapshotted at liftoff, the touchdown target keeps the nominal
    footprint (shifted along the measured base velocity, half a stance
    ahead) and aims `touchdown_depth` below the ground plane.  The
    target is anchored in the world and re-expressed in the current
    base frame every tick, so base motion during the swing cannot drag
    the touchdown point off the surface.  A PD correction around the
    interpolated reference makes the open-loop polynomial robust to
    tracking error accumulated earlier in the swing.

    On a penalty ground a foot arriving exactly at the surface carries
    no load, and planning stance forces on an unloaded foot slams it
    down.  Aiming at the penetration where the spring carries the
    foot's share of the weight hands over a pre-loaded contact instead.
    """

    def __init__(self, model: RobotModel, params: GaitParams,
                 state0: GeneralizedState, *, swing_kp: float = 900.0,
                 swing_kd: float = 60.0, ground_height: float = 0.0,
                 touchdown_depth: float = 0.0):
        self.model = model
        self.params = params
        self.swing_kp = swing_kp
        self.swing_kd = swing_kd
        self.ground_height = ground_height
        self.touchdown_depth = touchdown_depth
        cache = KinematicsCache.from_state(model, state0)
        Rt = cache.R_base.T
        self.nominal = {
            leg: Rt @ (cache.frame_position(model.frames[leg])
                       - state0.base_pos)
            for leg in FOOT_FRAMES}
        self.liftoff: dict = {}
        self.target: dict = {}
        self._target_w: dict = {}
        self._in_swing = {leg: False for leg in FOOT_FRAMES}

    def plan(self, t: float, state: GeneralizedState,
             cache: KinematicsCache) -> tuple[tuple, dict]:
        """Contact tuple and swing accelerations for the tick at t."""
        phases = contact_state(t, self.params)
        contacts = tuple(leg for leg in FOOT_FRAMES
                         if phases[leg][0] == "stance")
        R = cache.R_base
        Rt = R.T
        p = state.base_pos
        w_b = Rt @ state.base_ang_vel
        acc: dict = {}
        for leg in FOOT_FRAMES:
            mode, phase = phases[leg]
            if mode == "stance":
                self._in_swing[leg] = False
                continue
            frame = self.model.frames[leg]
            pos_b = Rt @ (cache.frame_position(frame) - p)
            if not self._in_swing[leg]:
                self._in_swing[leg] = True
                self.liftoff[leg] = pos_b
            # replanned every tick: the foothold under the hip shifts
            # with the current velocity estimate, so a catch placed
            # early in swing does not go stale while the base moves
            nominal_w = p + R @ self.nominal[leg]
            self._target_w[leg] = foothold(
                nominal_w, state.base_lin_vel,
                self.params.stance_duration,
                self.ground_height - self.touchdown_depth)
            self.target[leg] = Rt @ (self._target_w[leg] - p)
            sphi = swing_phase(phase, self.params)
            pos_r, vel_r, acc_r = swing_reference(
                sphi, self.liftoff[leg], self.target[leg],
                self.params.step_height, self.params.swing_duration)
            vel_b = Rt @ (cache.frame_velocity(frame)
                          - state.base_lin_vel) - np.cross(w_b, pos_b)
            acc[leg] = acc_r + self.swing_kp * (pos_r - pos_b) \
                + self.swing_kd * (vel_r - vel_b)
        return contacts, acc


# ---------------------------------------------------------------------------
# logging


@dataclass
class SimLog:
    """One record per control tick, aligned with the tick's input state.

    Columns (see `column_names`): time; base pose (position, unit
    quaternion w-x-y-z) and world twist; joint positions/velocities;
    end-effector world position/velocity; applied external force; per
    foot the plant contact force and the planned stance flag; solver
    status, iteration count, worst KKT residual, objective and whether
    torques were held over from the previous tick; worst constraint
    violation per group and overall; the co-integrated template base
    and effector states.  `stance` reflects the gait plan, not whether
    the plant foot actually touched.
    """

    t: np.ndarray
    base_pos: np.ndarray
    base_quat: np.ndarray
    base_lin_vel: np.ndarray
    base_ang_vel: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    ee_pos: np.ndarray
    ee_vel: np.ndarray
    f_ext: np.ndarray
    foot_forces: np.ndarray         # (n, 4, 3)
    stance: np.ndarray              # (n, 4) of 0/1
    qp_status: list
    qp_iterations: np.ndarray
    qp_kkt: np.ndarray
    qp_cost: np.ndarray
    qp_held: np.ndarray
    violations: np.ndarray          # (n, 6) per constraint group
    viol_max: np.ndarray
    tpl_base: np.ndarray
    tpl_base_vel: np.ndarray
    tpl_ee: np.ndarray
    tpl_ee_vel: np.ndarray

    VIOLATION_GROUPS = ("consistency", "stance", "swing", "friction",
                        "joint_accel", "torque")

    def column_names(self) -> list:
        names = ["t", "base_x", "base_y", "base_z",
                 "quat_w", "quat_x", "quat_y", "quat_z",
                 "vel_x", "vel_y", "vel_z",
                 "omega_x", "omega_y", "omega_z"]
        nj = self.q.shape[1]
        names += [f"q_{i}" for i in range(nj)]
        names += [f"qd_{i}" for i in range(nj)]
        names += ["ee_x", "ee_y", "ee_z", "ee_vx", "ee_vy", "ee_vz",
                  "force_x", "force_y", "force_z"]
        for foot in FOOT_FRAMES:
            names += [f"{foot}_fx", f"{foot}_fy", f"{foot}_fz"]
        names += [f"{foot}_stance" for foot in FOOT_FRAMES]
        names += ["qp_status", "qp_iterations", "qp_kkt", "qp_cost",
                  "qp_held"]
        names += [f"viol_{g}" for g in self.VIOLATION_GROUPS]
        names += ["viol_max"]
        names += ["tpl_base_x", "tpl_base_y", "tpl_base_z",
                  "tpl_base_vx", "tpl_base_vy", "tpl_base_vz",
                  "tpl_ee_x", "tpl_ee_y", "tpl_ee_z",
                  "tpl_ee_vx", "tpl_ee_vy", "tpl_ee_vz"]
        return names

    def __len__(self) -> int:
        return len(self.t)

    def write_csv(self, dest) -> None:
        """Write the log to a path or file object, stable formatting."""
        if hasattr(dest, "write"):
            self._write(dest)
        else:
            with open(dest, "w", encoding="utf-8", newline="") as fh:
                self._write(fh)

    def _write(self, fh) -> None:
        fh.write(",".join(self.column_names()) + "\n")
        for k in range(len(self.t)):
            row = [self.t[k], *self.base_pos[k], *self.base_quat[k],
                   *self.base_lin_vel[k], *self.base_ang_vel[k],
                   *self.q[k], *self.qd[k], *self.ee_pos[k],
                   *self.ee_vel[k], *self.f_ext[k],
                   *self.foot_forces[k].ravel()]
            cells = [f"{v:.12g}" for v in row]
            cells += [str(int(v)) for v in self.stance[k]]
            cells.append(self.qp_status[k])
            cells.append(str(int(self.qp_iterations[k])))
            cells += [f"{v:.12g}" for v in (self.qp_kkt[k],
                                            self.qp_cost[k])]
            cells.append(str(int(self.qp_held[k])))
            tail = [*self.violations[k], self.viol_max[k],
                    *self.tpl_base[k], *self.tpl_base_vel[k],
                    *self.tpl_ee[k], *self.tpl_ee_vel[k]]
            cells += [f"{v:.12g}" for v in tail]
            fh.write(",".join(cells) + "\n")


# ---------------------------------------------------------------------------
# closed loop


def _template_tables(settings: ImpedanceSettings):
    return (np.diag(settings.base_stiffness),
            np.diag(settings.base_damping),
            np.diag(settings.arm_stiffness),
            np.diag(settings.arm_damping),
            1.0 / np.diag(settings.base_inertia),
            1.0 / np.diag(settings.arm_inertia))


def _template_step(y: np.ndarray, force: np.ndarray, tables, base, h: float
                   ) -> np.ndarray:
    """RK4 step of the template with the force frozen over the step."""
    kb, db, ke, de, inv_mb, inv_me = tables

    def rhs(yv):
        e_b = base.x_b_des - yv[0:3]
        ed_b = base.v_b_des - yv[3:6]
        e_be = (yv[6:9] - yv[0:3]) - base.x_be_des
        ed_be = (yv[9:12] - yv[3:6]) - base.v_be_des
        f_b = kb * e_b + db * ed_b + ke * e_be + de * ed_be
        f_e = -(ke * e_be) - de * ed_be + force
        out = np.empty(12)
        out[0:3] = yv[3:6]
        out[3:6] = inv_mb * f_b
        out[6:9] = yv[9:12]
        out[9:12] = inv_me * f_e
        return out

    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(model: RobotModel, controller, profile: ForceProfile,
             duration: float, *, gait: GaitParams | None = None,
             contact: ContactParams | None = None,
             physics_dt: float = DEFAULT_PHYSICS_DT,
             control_dt: float = DEFAULT_CONTROL_DT,
             state0: GeneralizedState | None = None) -> SimLog:
    """Run the closed loop and return the per-tick log.

    `controller` needs a `tick(input, cache)` method plus `settings`
    and `cfg` attributes; without `gait` all four feet are planned as
    stance the whole run.  Raises SimulationDiverged on numerical
    blow-up and ControlFailure when the solver fails for many
    consecutive ticks; both carry the simulated time.
    """
    if contact is None:
        contact = ContactParams()
    ratio = control_dt / physics_dt
    n_sub = int(round(ratio))
    if n_sub < 1 or abs(ratio - n_sub) > 1e-9:
        raise ValueError("control_dt must be an integer multiple of "
                         "physics_dt")
    if duration < control_dt:
        raise ValueError("duration must cover at least one control tick")
    if contact.friction_coeff < controller.cfg.friction_coeff:
        raise ValueError("plant friction below the controller's cone")

    state = standing_start(model, contact) if state0 is None else state0
    settings = controller.settings
    arm_joints = model.arm_dofs() - 6

    cache = KinematicsCache.from_state(model, state)
    if gait is not None:
        depth = cache.mass_matrix()[0, 0] * 9.81 / (4.0 * contact.stiffness)
        runner = GaitRunner(model, gait, state,
                            ground_height=contact.ground_height,
                            touchdown_depth=depth)
    else:
        runner = None
    ee_frame = model.frames[EE_FRAME]
    x_b0 = state.base_pos.copy()
    R_des = quat_to_rot(state.base_quat)
    x_be0 = cache.frame_position(ee_frame) - state.base_pos
    q_arm0 = state.q[arm_joints].copy()

    tpl_base0 = TemplateState.at_rest(x_b0, x_be0)
    tables = _template_tables(settings)
    y_tpl = np.concatenate([tpl_base0.x_b, tpl_base0.v_b,
                            tpl_base0.x_e, tpl_base0.v_e])

    n_ticks = int(round(duration / control_dt))
    nj = model.n_j
    log = SimLog(
        t=np.arange(n_ticks) * control_dt,
        base_pos=np.zeros((n_ticks, 3)), base_quat=np.zeros((n_ticks, 4)),
        base_lin_vel=np.zeros((n_ticks, 3)),
        base_ang_vel=np.zeros((n_ticks, 3)),
        q=np.zeros((n_ticks, nj)), qd=np.zeros((n_ticks, nj)),
        ee_pos=np.zeros((n_ticks, 3)), ee_vel=np.zeros((n_ticks, 3)),
        f_ext=np.zeros((n_ticks, 3)),
        foot_forces=np.zeros((n_ticks, 4, 3)),
        stance=np.zeros((n_ticks, 4), dtype=int),
        qp_status=[""] * n_ticks,
        qp_iterations=np.zeros(n_ticks, dtype=int),
        qp_kkt=np.zeros(n_ticks), qp_cost=np.zeros(n_ticks),
        qp_held=np.zeros(n_ticks, dtype=int),
        violations=np.zeros((n_ticks, 6)), viol_max=np.zeros(n_ticks),
        tpl_base=np.zeros((n_ticks, 3)), tpl_base_vel=np.zeros((n_ticks, 3)),
        tpl_ee=np.zeros((n_ticks, 3)), tpl_ee_vel=np.zeros((n_ticks, 3)))

    # measured base acceleration: velocity delta over the previous
    # control period; per-substep values carry penalty-contact
    # transients an IMU would never pass through
    base_acc = np.zeros(3)
    prev_base_vel = state.base_lin_vel.copy()
    bad_ticks = 0
    for k in range(n_ticks):
        t = float(log.t[k])
        f_meas = eval_profile(profile, t)
        if runner is not None:
            contacts, swing_acc = runner.plan(t, state, cache)
        else:
            contacts, swing_acc = tuple(FOOT_FRAMES), {}

        inp = WbcInput(
            model=model, state=state, base_acc=base_acc,
            contacts=contacts, swing_acc_des=swing_acc,
            x_b_des=x_b0, v_b_des=np.zeros(3), R_des=R_des,
            w_des=np.zeros(3), x_be_des=x_be0, v_be_des=np.zeros(3),
            q_arm_des=q_arm0, f_ext=f_meas)
        out = controller.tick(inp, cache=cache)
        if out.status != OPTIMAL:
            bad_ticks += 1
            if bad_ticks >= _MAX_BAD_TICKS:
                raise ControlFailure(
                    f"controller failed {bad_ticks} consecutive ticks "
                    f"(last status {out.status!r}) at t={t:.4f} s", t)
        else:
            bad_ticks = 0
        tau = np.concatenate([out.tau_legs, out.tau_arm])

        log.base_pos[k] = state.base_pos
        log.base_quat[k] = state.base_quat
        log.base_lin_vel[k] = state.base_lin_vel
        log.base_ang_vel[k] = state.base_ang_vel
        log.q[k] = state.q
        log.qd[k] = state.qd
        log.ee_pos[k] = cache.frame_position(ee_frame)
        log.ee_vel[k] = cache.frame_velocity(ee_frame)
        log.f_ext[k] = f_meas
        for i, leg in enumerate(FOOT_FRAMES):
            log.stance[k, i] = 1 if leg in contacts else 0
        log.qp_status[k] = out.status
        log.qp_iterations[k] = out.iterations
        log.qp_kkt[k] = out.residuals.max() if out.residuals is not None \
            else math.nan
        log.qp_cost[k] = out.cost
        log.qp_held[k] = 1 if out.held else 0
        for i, g in enumerate(SimLog.VIOLATION_GROUPS):
            log.violations[k, i] = out.violations.get(g, 0.0)
        log.viol_max[k] = out.max_violation
        log.tpl_base[k] = y_tpl[0:3]
        log.tpl_base_vel[k] = y_tpl[3:6]
        log.tpl_ee[k] = y_tpl[6:9]
        log.tpl_ee_vel[k] = y_tpl[9:12]

        for j in range(n_sub):
            ts = t + j * physics_dt
            fj = f_meas if j == 0 else eval_profile(profile, ts)
            cj = cache if j == 0 else KinematicsCache.from_state(model,
                                                                 state)
            nxt, forces, udot = _advance(model, state, tau, fj, contact,
                                         physics_dt, cj)
            if j == 0:
                log.foot_forces[k] = forces
            if not np.all(np.isfinite(nxt.u)) \
                    or np.max(np.abs(nxt.u)) > _VEL_LIMIT \
                    or nxt.base_pos[2] < contact.ground_height - 1.0:
                raise SimulationDiverged(
                    f"state blew up at t={ts:.4f} s", ts)
            y_tpl = _template_step(y_tpl, fj, tables, tpl_base0,
                                   physics_dt)
            state = nxt
        base_acc = (state.base_lin_vel - prev_base_vel) / control_dt
        prev_base_vel = state.base_lin_vel.copy()
        cache = KinematicsCache.from_state(model, state)

    return log
