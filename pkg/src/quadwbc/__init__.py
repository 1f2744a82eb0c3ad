"""Whole-body Cartesian impedance control for a quadruped with an arm.

The package renders a chosen double-mass spring-damper behaviour at the
base and at the arm end-effector of a legged manipulator.  A per-tick
quadratic program trades desired base wrench and arm accelerations
against contact, friction, torque and joint limits; a penalty-contact
simulator and a trot schedule close the loop for the experiment runner.
"""

from .model import (RobotModel, GeneralizedState, ModelError, load_model,
                    loads_model, bundled_model_path)
from .dynamics import (KinematicsCache, mass_matrix, bias_vector,
                       frame_jacobian, frame_jdot_u, frame_position,
                       frame_velocity, forward_dynamics, kinetic_energy)
from .template import (ImpedanceSettings, TemplateState, critical_damping,
                       template_rhs, integrate_template)
from .qp import (QpProblem, QpSolution, QpSettings, AdmmQpSolver,
                 kkt_residuals, solve)
from .wbc import (WbcConfig, WbcInput, WbcOutput, WholeBodyController,
                  desired_base_wrench, desired_arm_accel, damped_pinv,
                  orientation_error, acceleration_bounds, assemble_qp,
                  map_torques, condense_swing_slack, solve_condensed)
from .gait import (GaitParams, GAIT_PRESETS, LEG_PHASE_OFFSETS,
                   contact_state, swing_reference, foothold,
                   write_schedule_csv)

__all__ = [
    "RobotModel", "GeneralizedState", "ModelError", "load_model",
    "loads_model", "bundled_model_path",
    "KinematicsCache", "mass_matrix", "bias_vector", "frame_jacobian",
    "frame_jdot_u", "frame_position", "frame_velocity", "forward_dynamics",
    "kinetic_energy",
    "ImpedanceSettings", "TemplateState", "critical_damping",
    "template_rhs", "integrate_template",
    "QpProblem", "QpSolution", "QpSettings", "AdmmQpSolver",
    "kkt_residuals", "solve",
    "WbcConfig", "WbcInput", "WbcOutput", "WholeBodyController",
    "desired_base_wrench", "desired_arm_accel", "damped_pinv",
    "orientation_error", "acceleration_bounds", "assemble_qp",
    "map_torques", "condense_swing_slack", "solve_condensed",
    "GaitParams", "GAIT_PRESETS", "LEG_PHASE_OFFSETS", "contact_state",
    "swing_reference", "foothold", "write_schedule_csv",
]
