"""Double-mass spring-damper reference template.

The behaviour the controller is asked to render: a virtual base mass
tied to its setpoint by one spring-damper and to a virtual end-effector
mass by a second one.  The external force acts on the end-effector
mass.  Axes are independent (all matrices diagonal), translation only:

    M_b xdd_b = K_b (x_b^d - x_b) + D_b (xd_b^d - xd_b)
                + K_e (x_be - x_be^d) + D_e (xd_be - xd_be^d)
    M_e xdd_e = K_e (x_be^d - x_be) + D_e (xd_be^d - xd_be) + F_e

with x_be = x_e - x_b the base-to-effector offset in world coordinates.
At rest under a constant force the offsets settle at K_e^-1 F_e and
K_b^-1 F_e: the effector displaces by the series sum of both springs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


def critical_damping(mass: float, stiffness: float) -> float:
    """Damping that makes a second-order axis critically damped.

    The square of the returned value equals 4 * mass * stiffness.
    """
    if mass <= 0.0 or stiffness <= 0.0:
        raise ValueError("mass and stiffness must be positive")
    return 2.0 * math.sqrt(mass * stiffness)


def _diag(values, name: str) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    if a.shape == ():
        a = np.full(3, float(a))
    if a.shape == (3,):
        a = np.diag(a)
    if a.shape != (3, 3):
        raise ValueError(f"{name} must be scalar, length-3 or 3x3")
    if np.any(a != np.diag(np.diag(a))):
        raise ValueError(f"{name} must be diagonal")
    if np.any(np.diag(a) <= 0.0):
        raise ValueError(f"{name} must have positive diagonal")
    out = np.array(a)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImpedanceSettings:
    """Diagonal template parameters plus base rotational gains.

    The rotational gains do not enter the template (it is translational
    only); they feed the base orientation wrench in the controller.
    """

    base_inertia: np.ndarray        # M_b, 3x3 diagonal, kg
    base_damping: np.ndarray        # D_b
    base_stiffness: np.ndarray      # K_b
    arm_inertia: np.ndarray         # M_e
    arm_damping: np.ndarray         # D_e
    arm_stiffness: np.ndarray       # K_e
    rot_stiffness: np.ndarray       # K_r
    rot_damping: np.ndarray         # D_r

    def __post_init__(self):
        for f in ("base_inertia", "base_damping", "base_stiffness",
                  "arm_inertia", "arm_damping", "arm_stiffness",
                  "rot_stiffness", "rot_damping"):
            object.__setattr__(self, f, _diag(getattr(self, f), f))

    @staticmethod
    def critically_damped(base_mass: float, base_stiffness: float,
                          arm_mass: float, arm_stiffness: float,
                          rot_stiffness: float = 300.0,
                          rot_damping: float = 100.0
                          ) -> "ImpedanceSettings":
        """Isotropic settings with dampings from the critical rule."""
        return ImpedanceSettings(
            base_inertia=base_mass,
            base_damping=critical_damping(base_mass, base_stiffness),
            base_stiffness=base_stiffness,
            arm_inertia=arm_mass,
            arm_damping=critical_damping(arm_mass, arm_stiffness),
            arm_stiffness=arm_stiffness,
            rot_stiffness=rot_stiffness,
            rot_damping=rot_damping)


@dataclass(frozen=True)
class TemplateState:
    """Template positions/velocities and their setpoints (world frame)."""

    x_b: np.ndarray
    v_b: np.ndarray
    x_e: np.ndarray
    v_e: np.ndarray
    x_b_des: np.ndarray
    v_b_des: np.ndarray
    x_be_des: np.ndarray
    v_be_des: np.ndarray

    def __post_init__(self):
        for f in ("x_b", "v_b", "x_e", "v_e", "x_b_des", "v_b_des",
                  "x_be_des", "v_be_des"):
            a = np.array(getattr(self, f), dtype=float)
            if a.shape != (3,):
                raise ValueError(f"{f} must be a 3-vector")
            a.setflags(write=False)
            object.__setattr__(self, f, a)

    @property
    def x_be(self) -> np.ndarray:
        return self.x_e - self.x_b

    @property
    def v_be(self) -> np.ndarray:
        return self.v_e - self.v_b

    @staticmethod
    def at_rest(x_b, x_be) -> "TemplateState":
        x_b = np.asarray(x_b, dtype=float)
        x_be = np.asarray(x_be, dtype=float)
        z = np.zeros(3)
        return TemplateState(x_b=x_b, v_b=z, x_e=x_b + x_be, v_e=z,
                             x_b_des=x_b, v_b_des=z, x_be_des=x_be,
                             v_be_des=z)


def template_rhs(state: TemplateState, force: np.ndarray,
                 s: ImpedanceSettings) -> tuple[np.ndarray, np.ndarray]:
    """Accelerations (xdd_b, xdd_e) of the two template masses."""
    e_b = state.x_b_des - state.x_b
    ed_b = state.v_b_des - state.v_b
    e_be = state.x_be - state.x_be_des
    ed_be = state.v_be - state.v_be_des
    f_b = s.base_stiffness @ e_b + s.base_damping @ ed_b \
        + s.arm_stiffness @ e_be + s.arm_damping @ ed_be
    f_e = -(s.arm_stiffness @ e_be) - s.arm_damping @ ed_be \
        + np.asarray(force, dtype=float)
    inv_b = 1.0 / np.diag(s.base_inertia)
    inv_e = 1.0 / np.diag(s.arm_inertia)
    return inv_b * f_b, inv_e * f_e


@dataclass(frozen=True)
class TemplateTrajectory:
    """Sampled template run: one row per step including t = 0."""

    t: np.ndarray
    x_b: np.ndarray     # (n, 3)
    v_b: np.ndarray
    x_e: np.ndarray
    v_e: np.ndarray

    def to_csv(self, path: str) -> None:
        header = ("t,xb_x,xb_y,xb_z,vb_x,vb_y,vb_z,"
                  "xe_x,xe_y,xe_z,ve_x,ve_y,ve_z")
        data = np.column_stack([self.t, self.x_b, self.v_b,
                                self.x_e, self.v_e])
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   fmt="%.12g")

    def final_state(self, base: TemplateState) -> TemplateState:
        return TemplateState(
            x_b=self.x_b[-1], v_b=self.v_b[-1],
            x_e=self.x_e[-1], v_e=self.v_e[-1],
            x_b_des=base.x_b_des, v_b_des=base.v_b_des,
            x_be_des=base.x_be_des, v_be_des=base.v_be_des)


def _step_rk4(y: np.ndarray, t: float, dt: float, rhs) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_template(initial: TemplateState,
                       force: Callable[[float], np.ndarray],
                       s: ImpedanceSettings, dt: float,
                       duration: float) -> TemplateTrajectory:
    """Fixed-step classical Runge-Kutta integration of the template.

    `force` maps time to the external force on the effector mass.
    Requires 0 < dt <= 1e-3: the template's stiffest default axis is
    comfortably resolved there and halving dt must not change results
    beyond integration order.
    """
    if not 0.0 < dt <= 1e-3:
        raise ValueError("dt must be in (0, 1e-3]")
    steps = int(round(duration / dt))

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        st = TemplateState(
            x_b=y[0:3], v_b=y[3:6], x_e=y[6:9], v_e=y[9:12],
            x_b_des=initial.x_b_des, v_b_des=initial.v_b_des,
            x_be_des=initial.x_be_des, v_be_des=initial.v_be_des)
        a_b, a_e = template_rhs(st, force(t), s)
        return np.concatenate([y[3:6], a_b, y[9:12], a_e])

    y = np.concatenate([initial.x_b, initial.v_b,
                        initial.x_e, initial.v_e])
    out = np.empty((steps + 1, 12))
    out[0] = y
    for k in range(steps):
        y = _step_rk4(y, k * dt, dt, rhs)
        out[k + 1] = y
    t = dt * np.arange(steps + 1)
    return TemplateTrajectory(t=t, x_b=out[:, 0:3], v_b=out[:, 3:6],
                              x_e=out[:, 6:9], v_e=out[:, 9:12])
