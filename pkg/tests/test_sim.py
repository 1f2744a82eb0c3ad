"""Plant, external force profiles and the closed simulation loop.

The plant contract pinned here: compliant ground with a clamped
spring-damper normal and regularized Coulomb friction, semi-implicit
Euler at the physics rate, torques held between control ticks, and the
reference template co-integrated with the very force the plant applies.
Expected numbers are either hand arithmetic (spring values, profile
samples) or independent recomputation in the test (scipy's sweep, a
local RK4 of the template equations).
"""

import io
import math

import numpy as np
import pytest
from scipy import signal

from quadwbc.model import (GeneralizedState, FOOT_FRAMES, EE_FRAME,
                           load_model, bundled_model_path)
from quadwbc.dynamics import (KinematicsCache, forward_dynamics,
                              integrate_state, frame_position)
from quadwbc.template import ImpedanceSettings, TemplateState, template_rhs
from quadwbc.gait import GaitParams, contact_state
from quadwbc.wbc import WbcConfig, WholeBodyController
from quadwbc.sim import (ContactParams, ground_contact_force, ForceProfile,
                         eval_profile, physics_step, standing_start,
                         GaitRunner, simulate, SimLog, SimulationError,
                         SimulationDiverged, ControlFailure,
                         DEFAULT_PHYSICS_DT, DEFAULT_CONTROL_DT)


def make_config(**over):
    base = dict(weight_base=1e4, weight_arm=1e2, reg_accel=1e-3,
                reg_force=1e-6, slack_penalty=1e6, friction_coeff=0.7,
                normal_force_min=5.0, normal_force_max=1000.0,
                accel_bound_horizon=0.1, manipulability_min=0.01,
                pinv_damping_max=0.1, posture_kp=25.0, posture_kd=10.0,
                control_period=2.5e-3)
    base.update(over)
    return WbcConfig(**base)


def make_settings():
    return ImpedanceSettings.critically_damped(
        base_mass=92.0, base_stiffness=1000.0,
        arm_mass=4.0, arm_stiffness=500.0)


def make_controller(model, **over):
    return WholeBodyController(model, make_settings(), make_config(**over))


# ---------------------------------------------------------------------------
# ground contact force


def test_contact_zero_above_ground():
    p = ContactParams()
    f = ground_contact_force(np.array([0.3, -0.2, 0.001]),
                             np.array([1.0, -2.0, -3.0]), p)
    assert np.array_equal(f, np.zeros(3))
    # exactly at the surface there is no penetration yet
    f = ground_contact_force(np.array([0.0, 0.0, 0.0]),
                             np.array([0.0, 0.0, -1.0]), p)
    assert np.array_equal(f, np.zeros(3))


def test_contact_normal_spring_value():
    # 1 mm penetration at rest, stiffness 1e5 N/m: exactly 100 N up
    p = ContactParams(stiffness=1e5, damping=3000.0)
    f = ground_contact_force(np.array([0.1, 0.2, -1e-3]), np.zeros(3), p)
    assert f[2] == pytest.approx(100.0, rel=1e-12)
    assert f[0] == 0.0 and f[1] == 0.0


def test_contact_normal_damping_and_clamp():
    p = ContactParams(stiffness=1e5, damping=3000.0)
    # sinking at 1 cm/s adds 30 N
    f = ground_contact_force(np.array([0, 0, -1e-3]),
                             np.array([0, 0, -0.01]), p)
    assert f[2] == pytest.approx(130.0, rel=1e-12)
    # retracting fast enough would pull: clamped to zero, friction too
    f = ground_contact_force(np.array([0.0, 0.0, -1e-3]),
                             np.array([0.3, 0.0, 0.05]), p)
    assert np.array_equal(f, np.zeros(3))


def test_contact_tangential_sliding():
    p = ContactParams(stiffness=1e5, damping=3000.0, friction_coeff=0.9,
                      slip_velocity=1e-3)
    f = ground_contact_force(np.array([0, 0, -1e-3]),
                             np.array([0.5, 0.0, 0.0]), p)
    # full Coulomb opposition: mu * N against the slip direction
    assert f[0] == pytest.approx(-90.0, rel=1e-12)
    assert f[1] == 0.0
    assert f[2] == pytest.approx(100.0, rel=1e-12)


def test_contact_tangential_regularized():
    # below the regularization velocity the force ramps linearly
    p = ContactParams(stiffness=1e5, damping=3000.0, friction_coeff=0.9,
                      slip_velocity=1e-3)
    f = ground_contact_force(np.array([0, 0, -1e-3]),
                             np.array([1e-4, 0.0, 0.0]), p)
    assert f[0] == pytest.approx(-9.0, rel=1e-12)


def test_contact_friction_cone_property(rng):
    p = ContactParams()
    for _ in range(300):
        pos = np.array([0.0, 0.0, -rng.uniform(0.0, 5e-3)])
        vel = rng.normal(scale=0.5, size=3)
        f = ground_contact_force(pos, vel, p)
        assert f[2] >= 0.0
        assert math.hypot(f[0], f[1]) <= p.friction_coeff * f[2] + 1e-12


def test_contact_params_validation():
    with pytest.raises(ValueError):
        ContactParams(stiffness=0.0)
    with pytest.raises(ValueError):
        ContactParams(damping=-1.0)
    with pytest.raises(ValueError):
        ContactParams(friction_coeff=0.0)
    with pytest.raises(ValueError):
        ContactParams(slip_velocity=0.0)


# ---------------------------------------------------------------------------
# force profiles


def test_zero_profile():
    prof = ForceProfile.zero()
    for t in (0.0, 0.5, 7.0):
        assert np.array_equal(eval_profile(prof, t), np.zeros(3))


def test_step_profile():
    prof = ForceProfile.step(50.0, [2.0, 0.0, 0.0], onset=1.0)
    assert np.array_equal(eval_profile(prof, 0.999), np.zeros(3))
    # direction is normalized, onset is inclusive
    np.testing.assert_allclose(eval_profile(prof, 1.0), [50.0, 0, 0])
    np.testing.assert_allclose(eval_profile(prof, 10.0), [50.0, 0, 0])


def test_chirp_profile_frozen_value():
    prof = ForceProfile.chirp(30.0, 0.1, 2.0, 10.0, [1.0, 0.0, 0.0])
    assert np.array_equal(eval_profile(prof, 0.0), np.zeros(3))
    # 30*sin(2*pi*(0.1 + 1.9*3/20)*3)
    assert eval_profile(prof, 3.0)[0] == pytest.approx(
        24.81241722823685, rel=1e-12)
    # past the sweep the force is off again
    assert np.array_equal(eval_profile(prof, 10.0 + 1e-9), np.zeros(3))


def test_chirp_matches_scipy_sweep():
    A, f0, f1, T = 12.5, 0.2, 1.8, 8.0
    prof = ForceProfile.chirp(A, f0, f1, T, [0.0, 1.0, 0.0])
    t = np.linspace(0.0, T, 4001)
    ref = A * signal.chirp(t, f0=f0, t1=T, f1=f1, method="linear", phi=-90)
    got = np.array([eval_profile(prof, ti)[1] for ti in t])
    np.testing.assert_allclose(got, ref, atol=1e-9 * A)


def test_chirp_ends_at_final_frequency():
    # phase at T is pi*(f0+f1)*T; with (f0+f1)*T an integer the sweep
    # closes at a zero crossing, a quick analytic cross-check
    prof = ForceProfile.chirp(30.0, 0.1, 2.0, 10.0, [1.0, 0.0, 0.0])
    assert abs(eval_profile(prof, 10.0)[0]) < 1e-8


def test_profile_validation():
    with pytest.raises(ValueError):
        ForceProfile.step(-1.0, [1, 0, 0])
    with pytest.raises(ValueError):
        ForceProfile.step(5.0, [0, 0, 0])
    with pytest.raises(ValueError):
        ForceProfile.chirp(5.0, 2.0, 1.0, 10.0, [1, 0, 0])   # f1 < f0
    with pytest.raises(ValueError):
        ForceProfile.chirp(5.0, 0.1, 1.0, 0.0, [1, 0, 0])
    with pytest.raises(ValueError):
        eval_profile(ForceProfile.zero(), -0.1)


# ---------------------------------------------------------------------------
# plant stepping


def test_standing_start_penetration(hyq_arm):
    """Feet start pre-penetrated so the spring carries the weight."""
    contact = ContactParams()
    st = standing_start(hyq_arm, contact)
    cache = KinematicsCache.from_state(hyq_arm, st)
    weight = cache.mass_matrix()[0, 0] * 9.81
    delta = weight / (4.0 * contact.stiffness)
    for foot in FOOT_FRAMES:
        z = cache.frame_position(hyq_arm.frames[foot])[2]
        assert z == pytest.approx(-delta, abs=1e-12)


def test_physics_step_reports_weight(hyq_arm):
    contact = ContactParams()
    st = standing_start(hyq_arm, contact)
    cache = KinematicsCache.from_state(hyq_arm, st)
    weight = cache.mass_matrix()[0, 0] * 9.81
    _, forces = physics_step(hyq_arm, st, np.zeros(hyq_arm.n_j),
                             np.zeros(3), contact, DEFAULT_PHYSICS_DT)
    assert forces.shape == (4, 3)
    np.testing.assert_allclose(forces[:, 2], weight / 4.0, rtol=1e-9)
    np.testing.assert_allclose(forces[:, :2], 0.0, atol=1e-12)


def test_physics_step_ballistic_matches_dynamics(hyq_arm):
    """Airborne the step is exactly semi-implicit Euler on the model."""
    st = GeneralizedState(
        base_pos=np.array([0.0, 0.0, 2.0]),
        base_quat=np.array([1.0, 0.0, 0.0, 0.0]),
        q=hyq_arm.nominal_q(),
        base_lin_vel=np.array([0.1, -0.2, 0.3]),
        base_ang_vel=np.array([0.0, 0.1, 0.0]),
        qd=np.zeros(hyq_arm.n_j))
    tau = np.zeros(hyq_arm.n_j)
    dt = DEFAULT_PHYSICS_DT
    nxt, forces = physics_step(hyq_arm, st, tau, np.zeros(3),
                               ContactParams(), dt)
    np.testing.assert_allclose(forces, 0.0, atol=0.0)
    udot = forward_dynamics(hyq_arm, st, tau)
    ref = integrate_state(hyq_arm, st, udot, dt)
    np.testing.assert_allclose(nxt.base_pos, ref.base_pos, rtol=1e-15)
    np.testing.assert_allclose(nxt.u, ref.u, rtol=1e-15, atol=1e-18)
    assert abs(nxt.base_quat @ nxt.base_quat - 1.0) < 1e-12


def test_zero_torque_collapse(hyq_arm):
    """With no actuation the trunk falls; the ground never pulls."""
    contact = ContactParams()
    st = standing_start(hyq_arm, contact)
    z0 = st.base_pos[2]
    tau = np.zeros(hyq_arm.n_j)
    for _ in range(1600):            # 0.4 s
        st, forces = physics_step(hyq_arm, st, tau, np.zeros(3), contact,
                                  DEFAULT_PHYSICS_DT)
        assert np.all(forces[:, 2] >= 0.0)
    assert st.base_pos[2] < z0 - 0.05


# ---------------------------------------------------------------------------
# closed loop


def stand_sim(model, profile, duration, **over):
    ctrl = make_controller(model)
    return simulate(model, ctrl, profile, duration, **over)


def test_simulate_validates_rates(hyq_arm):
    ctrl = make_controller(hyq_arm)
    with pytest.raises(ValueError):
        simulate(hyq_arm, ctrl, ForceProfile.zero(), 0.1,
                 physics_dt=2.5e-4, control_dt=6.1e-4)
    with pytest.raises(ValueError):
        simulate(hyq_arm, ctrl, ForceProfile.zero(), 0.1,
                 physics_dt=2.5e-3, control_dt=2.5e-4)


def test_simulate_rejects_slippery_plant(hyq_arm):
    """Plant friction below the controller's cone is a setup error."""
    ctrl = make_controller(hyq_arm)
    with pytest.raises(ValueError):
        simulate(hyq_arm, ctrl, ForceProfile.zero(), 0.1,
                 contact=ContactParams(friction_coeff=0.5))


def test_simulate_log_grid_and_columns(hyq_arm):
    log = stand_sim(hyq_arm, ForceProfile.zero(), 0.1)
    n = round(0.1 / DEFAULT_CONTROL_DT)
    assert log.t.shape == (n,)
    np.testing.assert_array_equal(log.t, np.arange(n) * DEFAULT_CONTROL_DT)
    assert np.all(log.stance == 1)
    assert all(s == "optimal" for s in log.qp_status)
    names = log.column_names()
    assert names[:14] == [
        "t", "base_x", "base_y", "base_z", "quat_w", "quat_x", "quat_y",
        "quat_z", "vel_x", "vel_y", "vel_z", "omega_x", "omega_y",
        "omega_z"]
    assert names[-1] == "tpl_ee_vz"
    assert "LF_foot_fz" in names and "qp_kkt" in names
    buf = io.StringIO()
    log.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(names)
    assert len(lines) == n + 1
    assert len(lines[1].split(",")) == len(names)


def test_simulate_deterministic(hyq_arm):
    def run():
        log = stand_sim(hyq_arm, ForceProfile.step(30.0, [1, 0, 0],
                                                   onset=0.05), 0.2)
        buf = io.StringIO()
        log.write_csv(buf)
        return log, buf.getvalue()

    log1, csv1 = run()
    log2, csv2 = run()
    assert csv1 == csv2
    np.testing.assert_array_equal(log1.base_pos, log2.base_pos)
    np.testing.assert_array_equal(log1.qp_iterations, log2.qp_iterations)


def test_stand_hold_keeps_posture(hyq_arm):
    log = stand_sim(hyq_arm, ForceProfile.zero(), 1.2)
    drift = np.linalg.norm(log.base_pos - log.base_pos[0], axis=1)
    assert np.max(drift) < 5e-3
    ee_drift = np.linalg.norm(log.ee_pos - log.ee_pos[0], axis=1)
    assert np.max(ee_drift) < 5e-3
    assert np.linalg.norm(log.base_lin_vel[-1]) < 0.01
    assert all(s == "optimal" for s in log.qp_status)
    assert np.max(log.viol_max) < 1e-6


def test_logged_forces_satisfy_contact_model(hyq_arm):
    log = stand_sim(hyq_arm, ForceProfile.step(50.0, [1, 0, 0],
                                               onset=0.1), 0.5)
    fz = log.foot_forces[:, :, 2]
    ft = np.linalg.norm(log.foot_forces[:, :, :2], axis=2)
    assert np.all(fz >= 0.0)
    assert np.all(ft <= ContactParams().friction_coeff * fz + 1e-9)


def test_template_co_integration_matches_reference(hyq_arm):
    """The logged template is RK4 under the plant's own force samples."""
    profile = ForceProfile.step(40.0, [1.0, 0.0, 0.0], onset=0.05)
    log = stand_sim(hyq_arm, profile, 0.25)
    s = make_settings()

    x_b0 = log.base_pos[0].copy()
    x_be0 = log.ee_pos[0] - log.base_pos[0]
    base = TemplateState.at_rest(x_b0, x_be0)

    def rhs(y, force):
        st = TemplateState(
            x_b=y[0:3], v_b=y[3:6], x_e=y[6:9], v_e=y[9:12],
            x_b_des=base.x_b_des, v_b_des=base.v_b_des,
            x_be_des=base.x_be_des, v_be_des=base.v_be_des)
        a_b, a_e = template_rhs(st, force, s)
        return np.concatenate([y[3:6], a_b, y[9:12], a_e])

    y = np.concatenate([base.x_b, base.v_b, base.x_e, base.v_e])
    h = DEFAULT_PHYSICS_DT
    sub = round(DEFAULT_CONTROL_DT / DEFAULT_PHYSICS_DT)
    for k in range(len(log.t)):
        np.testing.assert_allclose(log.tpl_base[k], y[0:3], atol=1e-9)
        np.testing.assert_allclose(log.tpl_ee[k], y[6:9], atol=1e-9)
        for j in range(sub):
            f = eval_profile(profile, log.t[k] + j * h)
            k1 = rhs(y, f)
            k2 = rhs(y + 0.5 * h * k1, f)
            k3 = rhs(y + 0.5 * h * k2, f)
            k4 = rhs(y + h * k3, f)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def test_divergence_detection(hyq_arm):
    class WildController:
        settings = make_settings()
        cfg = make_config()

        def tick(self, inp, cache=None):
            class Out:
                tau_legs = np.full(12, 1e9)
                tau_arm = np.full(7, 1e9)
                status = "optimal"
                iterations = 1
                residuals = None
                max_violation = 0.0
                violations = {}
                cost = 0.0
                held = False
            return Out()

    with pytest.raises(SimulationDiverged) as exc:
        simulate(hyq_arm, WildController(), ForceProfile.zero(), 1.0)
    assert 0.0 <= exc.value.time <= 1.0
    assert isinstance(exc.value, SimulationError)


def test_persistent_solver_failure_raises(hyq_arm):
    class StuckController:
        settings = make_settings()
        cfg = make_config()

        def tick(self, inp, cache=None):
            class Out:
                tau_legs = np.zeros(12)
                tau_arm = np.zeros(7)
                status = "max-iterations"
                iterations = 4000
                residuals = None
                max_violation = 0.0
                violations = {}
                cost = 0.0
                held = True
            return Out()

    with pytest.raises(ControlFailure) as exc:
        simulate(hyq_arm, StuckController(), ForceProfile.zero(), 1.0)
    assert exc.value.time < 0.5


# ---------------------------------------------------------------------------
# trotting


def test_gait_runner_snapshots(hyq_arm):
    params = GaitParams.preset(1)
    contact = ContactParams()
    st = standing_start(hyq_arm, contact)
    cache = KinematicsCache.from_state(hyq_arm, st)
    runner = GaitRunner(hyq_arm, params, st)

    contacts, acc = runner.plan(0.0, st, cache)
    assert contacts == tuple(FOOT_FRAMES)
    assert acc == {}

    # RF/LH swing once frac(t*f + 0.5) crosses the duty factor
    t = 0.1
    state = contact_state(t, params)
    assert state["RF_foot"][0] == "swing"
    contacts, acc = runner.plan(t, st, cache)
    assert contacts == ("LF_foot", "RH_foot")
    assert set(acc) == {"RF_foot", "LH_foot"}

    # liftoff snapshot is the current base-relative foot position and
    # the in-place target keeps the nominal footprint on the ground
    for leg in ("RF_foot", "LH_foot"):
        pos_b = cache.R_base.T @ (
            cache.frame_position(hyq_arm.frames[leg]) - st.base_pos)
        np.testing.assert_allclose(runner.liftoff[leg], pos_b, atol=1e-12)
        np.testing.assert_allclose(runner.target[leg][:2],
                                   runner.nominal[leg][:2], atol=1e-12)
        assert runner.target[leg][2] == pytest.approx(-st.base_pos[2])
        a = acc[leg]
        assert a.shape == (3,) and np.all(np.isfinite(a))
        assert np.linalg.norm(a) < 1e4

    again, acc2 = runner.plan(t, st, cache)
    assert again == contacts
    for leg in acc:
        np.testing.assert_array_equal(acc[leg], acc2[leg])

    # an explicit touchdown depth aims that far below the surface
    deep = GaitRunner(hyq_arm, params, st, touchdown_depth=0.005)
    deep.plan(t, st, cache)
    assert deep.target["RF_foot"][2] == pytest.approx(
        -st.base_pos[2] - 0.005)


def test_trot_short_run(hyq_arm):
    ctrl = make_controller(hyq_arm)
    params = GaitParams.preset(1)
    log = simulate(hyq_arm, ctrl, ForceProfile.zero(), 1.0, gait=params)

    # schedule honored: logged stance flags match the clock
    for k in (0, 100, 200, 399):
        cs = contact_state(log.t[k], params)
        flags = [1 if cs[leg][0] == "stance" else 0 for leg in FOOT_FRAMES]
        assert list(log.stance[k]) == flags
    n_stance = log.stance.sum(axis=1)
    assert np.all((n_stance == 2) | (n_stance == 4))

    assert all(s == "optimal" for s in log.qp_status)
    assert np.max(log.viol_max) < 1e-6
    # trunk keeps height while stepping in place
    assert np.max(np.abs(log.base_pos[:, 2] - log.base_pos[0, 2])) < 0.05
    fz = log.foot_forces[:, :, 2]
    assert np.all(fz >= 0.0)
