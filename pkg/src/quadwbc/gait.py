"""Trot gait: contact schedule, swing-foot arcs, foothold targets.

Everything here is a pure function of time and parameters.  A leg is
in stance exactly while frac(t*f_s + offset) < duty_factor, with the
diagonal pairs (LF, RH) and (RF, LH) half a cycle apart, so duty
factors of 0.5 and above always keep at least one diagonal on the
ground.

Swing arcs interpolate liftoff point to target foothold with a quintic
ease s(phi) = 6 phi^5 - 15 phi^4 + 10 phi^3 (zero velocity and
acceleration at both ends) and add a vertical bump
height * sin^2(pi * s(phi)).  Evaluating the bump on the warped phase
s rather than on phi keeps the whole arc twice continuously
differentiable at touchdown and liftoff.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import FOOT_FRAMES


# alternating diagonal pairs
LEG_PHASE_OFFSETS = {
    "LF_foot": 0.0,
    "RF_foot": 0.5,
    "LH_foot": 0.5,
    "RH_foot": 0.0,
}

# (duty factor, step frequency Hz)
GAIT_PRESETS = {
    1: (0.55, 1.4),
    2: (0.65, 1.4),
    3: (0.55, 1.8),
    4: (0.65, 1.8),
}

DEFAULT_STEP_HEIGHT = 0.08


@dataclass(frozen=True)
class GaitParams:
    duty_factor: float
    step_frequency: float
    step_height: float = DEFAULT_STEP_HEIGHT
    offsets: dict = field(
        default_factory=lambda: dict(LEG_PHASE_OFFSETS))

    def __post_init__(self):
        if not 0.5 <= self.duty_factor < 1.0:
            raise ValueError(
                f"duty factor must be in [0.5, 1), got "
                f"{self.duty_factor}")
        if self.step_frequency <= 0.0:
            raise ValueError("step frequency must be positive")
        if self.step_height < 0.0:
            raise ValueError("step height must be non-negative")
        missing = set(FOOT_FRAMES) - set(self.offsets)
        if missing:
            raise ValueError(f"missing phase offsets: {sorted(missing)}")

    @property
    def cycle_time(self) -> float:
        return 1.0 / self.step_frequency

    @property
    def stance_duration(self) -> float:
        return self.duty_factor / self.step_frequency

    @property
    def swing_duration(self) -> float:
        return (1.0 - self.duty_factor) / self.step_frequency

    @classmethod
    def preset(cls, number: int,
               step_height: float = DEFAULT_STEP_HEIGHT) -> "GaitParams":
        if number not in GAIT_PRESETS:
            raise ValueError(f"unknown gait preset {number}")
        d_f, f_s = GAIT_PRESETS[number]
        return cls(duty_factor=d_f, step_frequency=f_s,
                   step_height=step_height)


def leg_phase(t: float, params: GaitParams, leg: str) -> float:
    """Normalized cycle phase of one leg at time t."""
    return (t * params.step_frequency + params.offsets[leg]) % 1.0


def contact_state(t: float, params: GaitParams) -> dict:
    """Per-leg (mode, cycle phase) at time t; mode 'stance' or 'swing'."""
    if t < 0.0:
        raise ValueError("time must be non-negative")
    out = {}
    for leg in FOOT_FRAMES:
        phase = leg_phase(t, params, leg)
        mode = "stance" if phase < params.duty_factor else "swing"
        out[leg] = (mode, phase)
    return out


def swing_phase(cycle_phase: float, params: GaitParams) -> float:
    """Map a swing leg's cycle phase to [0, 1] across its swing."""
    return (cycle_phase - params.duty_factor) / (1.0 - params.duty_factor)


def _quintic_ease(phi: float) -> tuple[float, float, float]:
    # value and first two phase derivatives of 6p^5 - 15p^4 + 10p^3
    s = ((6.0 * phi - 15.0) * phi + 10.0) * phi ** 3
    ds = ((30.0 * phi - 60.0) * phi + 30.0) * phi ** 2
    dds = ((120.0 * phi - 180.0) * phi + 60.0) * phi
    return s, ds, dds


def swing_reference(phase: float, liftoff: np.ndarray,
                    target: np.ndarray, height: float,
                    duration: float
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Swing-foot arc sample: position, velocity, acceleration.

    All three are expressed in whatever frame liftoff/target are given
    in (the controller wants them base-relative); velocity and
    acceleration are time derivatives for a swing lasting `duration`
    seconds.
    """
    if not 0.0 <= phase <= 1.0:
        raise ValueError(f"swing phase {phase} outside [0, 1]")
    if duration <= 0.0:
        raise ValueError("swing duration must be positive")
    liftoff = np.asarray(liftoff, dtype=float)
    target = np.asarray(target, dtype=float)
    s, ds, dds = _quintic_ease(phase)

    span = target - liftoff
    pos = liftoff + span * s
    vel_phi = span * ds
    acc_phi = span * dds

    # vertical bump on the warped phase; all derivatives carry ds/dds
    # factors, so they vanish at both endpoints
    pos = pos.copy()
    pos[2] += height * np.sin(np.pi * s) ** 2
    vel_phi[2] += height * np.pi * np.sin(2.0 * np.pi * s) * ds
    acc_phi[2] += height * np.pi * (
        np.sin(2.0 * np.pi * s) * dds
        + 2.0 * np.pi * np.cos(2.0 * np.pi * s) * ds ** 2)

    return pos, vel_phi / duration, acc_phi / duration ** 2


def foothold(nominal: np.ndarray, base_velocity: np.ndarray,
             stance_duration: float,
             ground_height: float = 0.0) -> np.ndarray:
    """Target foothold: nominal shifted by half a stance of travel."""
    nominal = np.asarray(nominal, dtype=float)
    v = np.asarray(base_velocity, dtype=float)
    out = np.array([nominal[0] + 0.5 * stance_duration * v[0],
                    nominal[1] + 0.5 * stance_duration * v[1],
                    ground_height])
    return out


def schedule_rows(params: GaitParams, t_end: float,
                  dt: float) -> list:
    """Stance flags (1/0) per leg on a fixed time grid."""
    rows = []
    n = int(round(t_end / dt))
    for i in range(n):
        t = i * dt
        state = contact_state(t, params)
        row = {"t": t}
        for leg in FOOT_FRAMES:
            row[leg] = 1 if state[leg][0] == "stance" else 0
        rows.append(row)
    return rows


def write_schedule_csv(path, params: GaitParams, t_end: float,
                       dt: float) -> None:
    rows = schedule_rows(params, t_end, dt)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["t", *FOOT_FRAMES])
        writer.writeheader()
        writer.writerows(rows)
