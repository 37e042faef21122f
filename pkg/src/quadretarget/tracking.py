"""Inner tracking problem for temporal retargeting.

Builds a finite-horizon optimal control problem that makes the reduced
rigid-body plant follow a time-warped whole-body motion: base pose and
foot positions are resampled through the warp, stance/swing scheduling
comes from the warped contact schedule, and physical limits (friction
cone, unilateral forces, torque-implied force caps) enter the cost as
smooth quadratic penalties.
"""

from dataclasses import dataclass

import numpy as np

from .ddp import OcpProblem, OcpSolution
from .kinematics import GeneralizedCoord, ik
from .motion import Motion, TemporalParams, warp_knots
from .quatmath import quat_diff, quat_slerp, quat_to_mat
from .srb import (
    GRAVITY,
    TANGENT_DIM,
    U_DIM,
    _srb_fd_derivs,
    _srb_rollout,
    _srb_rollout_feedback,
    _srb_state_add,
    _srb_state_diff,
    _srb_step,
    nominal_force_cap,
)


@dataclass
class TrackingWeights:
    base_pos: float = 100.0
    base_rot: float = 50.0
    feet: float = 50.0
    u_reg: float = 1e-6
    penalty: float = 1e-3
    mu: float = 0.7


class SrbPlant:
    """Kernel-backed plant adapter for the DDP solver."""

    tangent_dim = TANGENT_DIM
    control_dim = U_DIM
    fd_step = 1e-6

    def __init__(self, model, contacts: np.ndarray, dt: float):
        self.mass = float(model.mass)
        self.inertia = np.ascontiguousarray(model.body_inertia)
        self.inv_inertia = np.ascontiguousarray(np.linalg.inv(model.body_inertia))
        self.contacts = np.ascontiguousarray(contacts, dtype=np.bool_)
        self.dt = float(dt)

    def step(self, x, u, i):
        return _srb_step(x, u, self.contacts[i], self.dt, self.mass,
                         self.inertia, self.inv_inertia, GRAVITY)

    def state_add(self, x, d):
        return _srb_state_add(x, d)

    def state_diff(self, x1, x0):
        return _srb_state_diff(x1, x0)

    def rollout(self, x0, us):
        return _srb_rollout(np.ascontiguousarray(x0), np.ascontiguousarray(us),
                            self.contacts, self.dt, self.mass, self.inertia,
                            self.inv_inertia, GRAVITY)

    def rollout_feedback(self, xs_nom, us_nom, ks, Ks, step_scale):
        xs, us = _srb_rollout_feedback(
            xs_nom, us_nom, np.ascontiguousarray(ks), np.ascontiguousarray(Ks),
            float(step_scale), self.contacts, self.dt, self.mass, self.inertia,
            self.inv_inertia, GRAVITY,
        )
        if not np.all(np.isfinite(xs)):
            return None, None
        return xs, us

    def derivs(self, xs, us):
        return _srb_fd_derivs(np.ascontiguousarray(xs), np.ascontiguousarray(us),
                              self.contacts, self.dt, self.mass, self.inertia,
                              self.inv_inertia, GRAVITY, self.fd_step)


class TrackingCost:
    """Quadratic tracking of base pose and feet plus control/constraint terms.

    Derivatives are Gauss-Newton: orientation residuals use the
    tangent-space error with identity Jacobian, penalty Hessians keep the
    rank-one outer-product terms.
    """

    def __init__(self, targets_pos, targets_quat, targets_feet, contacts,
                 weights: TrackingWeights, f_cap: float):
        self.pos = targets_pos
        self.quat = targets_quat
        self.feet = targets_feet  # (h+1, 12)
        self.contacts = contacts  # (h, 4) stance mask per control step
        self.w = weights
        self.f_cap = float(f_cap)

    # -- residuals ------------------------------------------------------

    def _track_value(self, k, x):
        w = self.w
        dp = x[0:3] - self.pos[k]
        dr = quat_diff(self.quat[k], x[3:7])
        df = x[13:25] - self.feet[k]
        return 0.5 * (w.base_pos * dp @ dp + w.base_rot * dr @ dr + w.feet * df @ df)

    def _track_grad_hess(self, k, x):
        w = self.w
        lx = np.zeros(TANGENT_DIM)
        lxx = np.zeros((TANGENT_DIM, TANGENT_DIM))
        lx[0:3] = w.base_pos * (x[0:3] - self.pos[k])
        lx[3:6] = w.base_rot * quat_diff(self.quat[k], x[3:7])
        lx[12:24] = w.feet * (x[13:25] - self.feet[k])
        lxx[0:3, 0:3] = w.base_pos * np.eye(3)
        lxx[3:6, 3:6] = w.base_rot * np.eye(3)
        lxx[12:24, 12:24] = w.feet * np.eye(12)
        return lx, lxx

    def _penalty_value(self, k, u):
        total = 0.0
        mu = self.w.mu
        for j in range(4):
            if not self.contacts[k, j]:
                continue
            f = u[3 * j: 3 * j + 3]
            neg = max(0.0, -f[2])
            total += neg * neg
            tang = np.hypot(f[0], f[1])
            cone = tang - mu * f[2]
            if cone > 0.0:
                total += cone * cone
            over = np.linalg.norm(f) - self.f_cap
            if over > 0.0:
                total += over * over
        return self.w.penalty * total

    def _penalty_grad_hess(self, k, u):
        grad = np.zeros(U_DIM)
        hess = np.zeros((U_DIM, U_DIM))
        mu = self.w.mu
        wp = self.w.penalty
        for j in range(4):
            if not self.contacts[k, j]:
                continue
            s = slice(3 * j, 3 * j + 3)
            f = u[s]
            if f[2] < 0.0:
                grad[3 * j + 2] += wp * 2.0 * f[2]
                hess[3 * j + 2, 3 * j + 2] += wp * 2.0
            tang = np.hypot(f[0], f[1])
            cone = tang - mu * f[2]
            if cone > 0.0 and tang > 1e-12:
                g = np.array([f[0] / tang, f[1] / tang, -mu])
                grad[s] += wp * 2.0 * cone * g
                hess[s, s] += wp * 2.0 * np.outer(g, g)
            mag = np.linalg.norm(f)
            over = mag - self.f_cap
            if over > 0.0 and mag > 1e-12:
                g = f / mag
                grad[s] += wp * 2.0 * over * g
                hess[s, s] += wp * 2.0 * np.outer(g, g)
        return grad, hess

    # -- evaluator protocol ---------------------------------------------

    def stage(self, k, x, u):
        return (self._track_value(k, x)
                + 0.5 * self.w.u_reg * float(u @ u)
                + self._penalty_value(k, u))

    def final(self, x):
        return self._track_value(self.pos.shape[0] - 1, x)

    def stage_derivs(self, k, x, u):
        lx, lxx = self._track_grad_hess(k, x)
        pg, ph = self._penalty_grad_hess(k, u)
        lu = self.w.u_reg * u + pg
        luu = self.w.u_reg * np.eye(U_DIM) + ph
        lux = np.zeros((U_DIM, TANGENT_DIM))
        return lx, lu, lxx, luu, lux

    def final_derivs(self, x):
        return self._track_grad_hess(self.pos.shape[0] - 1, x)


@dataclass
class TrackingTargets:
    pos: np.ndarray        # (h+1, 3)
    quat: np.ndarray       # (h+1, 4)
    feet: np.ndarray       # (h+1, 12)
    contacts: np.ndarray   # (h+1, 4)
    dt: float


def warp_targets(motion: Motion, params: TemporalParams) -> TrackingTargets:
    """Resample base pose, feet and contacts through the time warp."""
    if not motion.has_base or motion.joint_angles is None:
        raise ValueError("tracking targets need a motion with generalized coordinates")
    duration = motion.duration
    control_knots, source_knots = warp_knots(params, duration)
    total = control_knots[-1]
    dt = 1.0 / motion.fps
    h = max(int(round(total * motion.fps)), 1)

    pos = np.empty((h + 1, 3))
    quat = np.empty((h + 1, 4))
    feet = np.empty((h + 1, 12))
    contacts = np.empty((h + 1, 4), dtype=bool)
    fps = motion.fps
    last = motion.last_frame
    for k in range(h + 1):
        s = float(np.interp(min(k * dt, total), control_knots, source_knots))
        f = min(s * fps, float(last))
        i0 = min(int(np.floor(f)), last - 1)
        w = f - i0
        pos[k] = (1 - w) * motion.base_pos[i0] + w * motion.base_pos[i0 + 1]
        quat[k] = quat_slerp(motion.base_quat[i0], motion.base_quat[i0 + 1], w)
        fe = (1 - w) * motion.feet[i0] + w * motion.feet[i0 + 1]
        feet[k] = fe.reshape(-1)
        contacts[k] = motion.contacts[int(round(f))] if motion.contacts is not None \
            else np.ones(4, dtype=bool)
    return TrackingTargets(pos, quat, feet, contacts, dt)


def initial_state(targets: TrackingTargets) -> np.ndarray:
    x0 = np.empty(25)
    x0[0:3] = targets.pos[0]
    x0[3:7] = targets.quat[0]
    dt = targets.dt
    x0[7:10] = (targets.pos[1] - targets.pos[0]) / dt
    x0[10:13] = quat_diff(targets.quat[0], targets.quat[1]) / dt
    x0[13:25] = targets.feet[0]
    return x0


def initial_controls(model, targets: TrackingTargets) -> np.ndarray:
    """Stabilizing initial guess for the tracker.

    A pose PD (position and attitude) rolled forward through the plant
    produces a desired base wrench per step, realized as stance-foot
    forces via a regularized grasp-matrix least squares; swing feet
    follow the target foot velocities.  A plain open-loop weight-share
    guess tumbles over long horizons, which would leave the optimizer
    without a finite starting trajectory.
    """
    h = targets.pos.shape[0] - 1
    dt = targets.dt
    plant = SrbPlant(model, targets.contacts[:h], dt)
    us = np.zeros((h, U_DIM))
    kp, kd = 40.0, 12.0
    kp_rot, kd_rot = 60.0, 15.0
    x = initial_state(targets)
    for k in range(h):
        stance = np.nonzero(targets.contacts[k])[0]
        if stance.size:
            v_target = (targets.pos[k + 1] - targets.pos[k]) / dt
            acc = (-GRAVITY + kp * (targets.pos[k] - x[0:3])
                   + kd * (v_target - x[7:10]))
            quat = x[3:7] / np.linalg.norm(x[3:7])
            rot_err = quat_diff(quat, targets.quat[k])  # body frame
            tau_body = model.body_inertia @ (kp_rot * rot_err - kd_rot * x[10:13])
            rot = quat_to_mat(quat)
            wrench = np.concatenate([model.mass * acc, rot @ tau_body])
            grasp = np.zeros((6, 3 * stance.size))
            for col, j in enumerate(stance):
                grasp[0:3, 3 * col: 3 * col + 3] = np.eye(3)
                r = x[13 + 3 * j: 16 + 3 * j] - x[0:3]
                grasp[3:6, 3 * col: 3 * col + 3] = np.array([
                    [0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0],
                ])
            gram = grasp @ grasp.T + 1e-6 * np.eye(6)
            forces = grasp.T @ np.linalg.solve(gram, wrench)
            for col, j in enumerate(stance):
                us[k, 3 * j: 3 * j + 3] = forces[3 * col: 3 * col + 3]
        for j in range(4):
            if not targets.contacts[k, j]:
                us[k, 12 + 3 * j: 15 + 3 * j] = (
                    targets.feet[k + 1][3 * j: 3 * j + 3] - targets.feet[k][3 * j: 3 * j + 3]
                ) / dt
        x = plant.step(x, us[k], k)
    return us


def build_tracking_problem(
    model,
    motion: Motion,
    params: TemporalParams,
    weights: TrackingWeights | None = None,
) -> tuple[OcpProblem, TrackingTargets]:
    weights = weights or TrackingWeights()
    targets = warp_targets(motion, params)
    h = targets.pos.shape[0] - 1
    plant = SrbPlant(model, targets.contacts[:h], targets.dt)
    cost = TrackingCost(targets.pos, targets.quat, targets.feet,
                        targets.contacts[:h], weights, nominal_force_cap(model))
    problem = OcpProblem(h, targets.dt, initial_state(targets), plant, cost,
                         contacts=targets.contacts[:h])
    return problem, targets


def solution_to_motion(model, solution: OcpSolution, targets: TrackingTargets,
                       fps: float) -> Motion:
    """Convert an optimized state trajectory back to a whole-body motion.

    Joint angles are recovered kinematically: per-frame IK fits the legs
    to the optimized foot positions with the base pose taken directly
    from the state.
    """
    xs = solution.xs
    n = xs.shape[0]
    keypoints = np.empty((n, 16, 3))
    joints = np.empty((n, model.dof))
    guess_joints = model.neutral_coord().joints
    foot_weights = np.zeros(16)
    foot_weights[12:16] = 1.0
    from .kinematics import fk  # local import to avoid cycle at module load

    for i in range(n):
        base = GeneralizedCoord(xs[i, 0:3], xs[i, 3:7] / np.linalg.norm(xs[i, 3:7]),
                                guess_joints)
        kp_targets = np.zeros((16, 3))
        kp_targets[12:16] = xs[i, 13:25].reshape(4, 3)
        sol = ik(model, kp_targets, weights=foot_weights, q_init=base, lock_base=True)
        joints[i] = sol.q.joints
        guess_joints = sol.q.joints
        keypoints[i] = fk(model, sol.q)
    return Motion(
        fps=fps,
        keypoints=keypoints,
        contacts=targets.contacts.copy(),
        base_pos=xs[:, 0:3].copy(),
        base_quat=xs[:, 3:7] / np.linalg.norm(xs[:, 3:7], axis=1, keepdims=True),
        joint_angles=joints,
    ).validate()
