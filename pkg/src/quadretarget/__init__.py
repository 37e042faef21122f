"""Kino-dynamic retargeting of quadruped keypoint motions.

Two stages: a spatial stage reconstructs kinematically feasible
whole-body motion from (possibly baseless) keypoint trajectories under
foot-contact constraints, and a temporal stage optimizes piecewise
time-scale parameters so a model-based tracker on a reduced dynamics
model can follow the motion within physical limits.
"""

__version__ = "0.1.0"

from ._accel import NUMBA_ENABLED
from .motion import (
    Heightmap,
    Motion,
    MotionFormatError,
    TemporalParams,
    deform_time,
    detect_contacts,
    interp_keypoints,
    load_heightmap,
    load_motion,
    lowpass,
    save_motion,
)
from .robot import RobotModel, RobotModelError, load_robot_json, parse_urdf_subset
from .kinematics import (
    GeneralizedCoord,
    GeneralizedVelocity,
    fk,
    ik,
    jacobian,
    uvm_retarget,
)
from .qp import QpProblem, QpResult, QpSettings, solve_qp
from .srb import DynControl, DynState, soft_constraints, step
from .ddp import OcpOptions, OcpProblem, OcpSolution, backward_pass, forward_pass, solve_ocp
from .smr import FootAnchors, SmrConfig, SmrError, fit_exit_velocity, project_ground, smr, smr_frame
from .tmr import GpHyper, GpModel, ScoreWeights, ei_acquire, gp_fit, next_alpha, score, tmr
from .tracking import TrackingWeights, build_tracking_problem, solution_to_motion
from .metrics import (
    MetricsReport,
    contact_iou,
    dtw_keypoint_l1,
    foot_slide,
    recovery_rate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
