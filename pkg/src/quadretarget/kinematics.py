"""Forward kinematics, Jacobians, damped-least-squares IK and
direction-preserving keypoint retargeting.

Generalized coordinates are ``[base_pos, base_quat, joints]`` and tangent
vectors are ordered ``[linear velocity (world), angular velocity (body),
joint velocities]`` with dimension ``M + 6``.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import maybe_njit
from .motion import Motion, N_KEYPOINTS, PARENT_INDEX
from .quatmath import (
    quat_diff,
    quat_exp,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_mat,
)


@dataclass
class GeneralizedCoord:
    """Floating-base pose plus joint angles."""

    base_pos: np.ndarray
    base_quat: np.ndarray
    joints: np.ndarray

    def __post_init__(self):
        self.base_pos = np.asarray(self.base_pos, dtype=float).reshape(3)
        self.base_quat = np.asarray(self.base_quat, dtype=float).reshape(4)
        self.joints = np.asarray(self.joints, dtype=float).reshape(-1)
        if abs(np.linalg.norm(self.base_quat) - 1.0) > 1e-9:
            raise ValueError("base_quat must be unit norm")

    def copy(self) -> "GeneralizedCoord":
        return GeneralizedCoord(self.base_pos.copy(), self.base_quat.copy(), self.joints.copy())

    @classmethod
    def identity(cls, joints: np.ndarray) -> "GeneralizedCoord":
        return cls(np.zeros(3), np.array([1.0, 0, 0, 0]), np.asarray(joints, dtype=float))


@dataclass
class GeneralizedVelocity:
    """Tangent of :class:`GeneralizedCoord`; angular part in body frame."""

    lin_vel: np.ndarray
    ang_vel: np.ndarray
    joint_vel: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.lin_vel, self.ang_vel, self.joint_vel])

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "GeneralizedVelocity":
        v = np.asarray(v, dtype=float)
        return cls(v[0:3].copy(), v[3:6].copy(), v[6:].copy())

    @classmethod
    def zero(cls, n_joints: int) -> "GeneralizedVelocity":
        return cls(np.zeros(3), np.zeros(3), np.zeros(n_joints))


def integrate_coord(q: GeneralizedCoord, qdot: np.ndarray, dt: float) -> GeneralizedCoord:
    """Integrate a tangent step; the quaternion uses the exponential map."""
    return GeneralizedCoord(
        q.base_pos + dt * qdot[0:3],
        quat_normalize(quat_mul(q.base_quat, quat_exp(dt * qdot[3:6]))),
        q.joints + dt * qdot[6:],
    )


def coord_difference(q_to: GeneralizedCoord, q_from: GeneralizedCoord) -> np.ndarray:
    """Tangent vector ``d`` with ``integrate_coord(q_from, d, 1) == q_to``."""
    return np.concatenate(
        [
            q_to.base_pos - q_from.base_pos,
            quat_diff(q_from.base_quat, q_to.base_quat),
            q_to.joints - q_from.joints,
        ]
    )


@maybe_njit
def _fk_frames(base_pos, base_quat, theta, jparent, jaxis, jorigin_t, jorigin_q, kp_joint, kp_offset):
    """World keypoint positions plus per-joint world origins and axes."""
    m = theta.shape[0]
    jpos = np.empty((m, 3))
    jquat = np.empty((m, 4))
    jaxis_w = np.empty((m, 3))
    for j in range(m):
        if jparent[j] < 0:
            ppos = base_pos
            pquat = base_quat
        else:
            ppos = jpos[jparent[j]]
            pquat = jquat[jparent[j]]
        pos = ppos + quat_rotate(pquat, jorigin_t[j])
        quat = quat_mul(pquat, jorigin_q[j])
        rot = np.empty(3)
        for k in range(3):
            rot[k] = jaxis[j, k] * theta[j]
        jpos[j] = pos
        jquat[j] = quat_mul(quat, quat_exp(rot))
        jaxis_w[j] = quat_rotate(quat, jaxis[j])
    nk = kp_joint.shape[0]
    kp = np.empty((nk, 3))
    for i in range(nk):
        j = kp_joint[i]
        if j < 0:
            kp[i] = base_pos + quat_rotate(base_quat, kp_offset[i])
        else:
            kp[i] = jpos[j] + quat_rotate(jquat[j], kp_offset[i])
    return kp, jpos, jaxis_w


@maybe_njit
def _jacobian_all(base_pos, base_quat, kp, jpos, jaxis_w, jparent, kp_joint):
    """Analytic Jacobians of every keypoint w.r.t. [v, w_body, joint_vel]."""
    m = jparent.shape[0]
    nk = kp.shape[0]
    rot = quat_to_mat(base_quat)
    jac = np.zeros((nk, 3, 6 + m))
    for i in range(nk):
        for r in range(3):
            jac[i, r, r] = 1.0
        # Body-frame angular velocity: pdot = R (w x r_body).
        rb = np.empty(3)
        d0 = kp[i, 0] - base_pos[0]
        d1 = kp[i, 1] - base_pos[1]
        d2 = kp[i, 2] - base_pos[2]
        for r in range(3):
            rb[r] = rot[0, r] * d0 + rot[1, r] * d1 + rot[2, r] * d2
        for c in range(3):
            ax = np.zeros(3)
            ax[c] = 1.0
            cx = ax[1] * rb[2] - ax[2] * rb[1]
            cy = ax[2] * rb[0] - ax[0] * rb[2]
            cz = ax[0] * rb[1] - ax[1] * rb[0]
            jac[i, 0, 3 + c] = rot[0, 0] * cx + rot[0, 1] * cy + rot[0, 2] * cz
            jac[i, 1, 3 + c] = rot[1, 0] * cx + rot[1, 1] * cy + rot[1, 2] * cz
            jac[i, 2, 3 + c] = rot[2, 0] * cx + rot[2, 1] * cy + rot[2, 2] * cz
        j = kp_joint[i]
        while j >= 0:
            a = jaxis_w[j]
            d = kp[i] - jpos[j]
            jac[i, 0, 6 + j] = a[1] * d[2] - a[2] * d[1]
            jac[i, 1, 6 + j] = a[2] * d[0] - a[0] * d[2]
            jac[i, 2, 6 + j] = a[0] * d[1] - a[1] * d[0]
            j = jparent[j]
    return jac


def _require_complete(model):
    if not model.complete:
        raise ValueError(
            f"robot model '{model.name}' does not define all {N_KEYPOINTS} keypoints"
        )


def fk(model, q: GeneralizedCoord) -> np.ndarray:
    """World positions of all 16 keypoints."""
    _require_complete(model)
    kp, _, _ = _fk_frames(
        q.base_pos, q.base_quat, q.joints,
        model.kin_joint_parent, model.kin_joint_axis,
        model.kin_joint_origin_t, model.kin_joint_origin_q,
        model.kin_kp_joint, model.kin_kp_offset,
    )
    return kp


def fk_frames(model, q: GeneralizedCoord):
    _require_complete(model)
    return _fk_frames(
        q.base_pos, q.base_quat, q.joints,
        model.kin_joint_parent, model.kin_joint_axis,
        model.kin_joint_origin_t, model.kin_joint_origin_q,
        model.kin_kp_joint, model.kin_kp_offset,
    )


def jacobian_all(model, q: GeneralizedCoord) -> np.ndarray:
    """Jacobians of all keypoints, shape ``(16, 3, M+6)``."""
    kp, jpos, jaxis_w = fk_frames(model, q)
    return _jacobian_all(
        q.base_pos, q.base_quat, kp, jpos, jaxis_w,
        model.kin_joint_parent, model.kin_kp_joint,
    )


def jacobian(model, q: GeneralizedCoord, keypoint: int) -> np.ndarray:
    """Jacobian of one keypoint, shape ``(3, M+6)``."""
    return jacobian_all(model, q)[keypoint]


@dataclass
class IkResult:
    q: GeneralizedCoord
    residual: float
    iterations: int


def ik(
    model,
    targets: np.ndarray,
    weights: np.ndarray | None = None,
    q_init: GeneralizedCoord | None = None,
    lock_base: bool = False,
    tol: float = 1e-4,
    max_iters: int = 200,
    damping: float = 1e-4,
) -> IkResult:
    """Damped-least-squares IK over all keypoints.

    Iterates until the largest weighted keypoint error drops below
    ``tol`` meters or ``max_iters`` is reached, and returns the best
    iterate seen (best effort; the residual is always reported).
    """
    _require_complete(model)
    targets = np.asarray(targets, dtype=float).reshape(N_KEYPOINTS, 3)
    if weights is None:
        weights = np.ones(N_KEYPOINTS)
    weights = np.asarray(weights, dtype=float)
    active = weights > 0
    q = (q_init.copy() if q_init is not None else model.neutral_coord())
    n = 6 + model.dof
    cols = slice(6, n) if lock_base else slice(0, n)

    best_q, best_res = q.copy(), np.inf
    iters = 0
    for iters in range(max_iters + 1):
        kp, jpos, jaxis_w = fk_frames(model, q)
        err = targets - kp
        res = float(np.max(np.linalg.norm(err[active], axis=1)))
        if res < best_res:
            best_q, best_res = q.copy(), res
        if res < tol or iters == max_iters:
            break
        jac = _jacobian_all(q.base_pos, q.base_quat, kp, jpos, jaxis_w,
                            model.kin_joint_parent, model.kin_kp_joint)
        rows = jac[active][:, :, cols].reshape(-1, cols.stop - cols.start)
        e = err[active].reshape(-1)
        w = np.repeat(weights[active], 3)
        jtw = rows.T * w
        lhs = jtw @ rows + damping * np.eye(rows.shape[1])
        step = np.linalg.solve(lhs, jtw @ e)
        # Clamp to keep DLS stable near singular stretched-leg poses.
        peak = np.max(np.abs(step))
        if peak > 0.5:
            step *= 0.5 / peak
        full = np.zeros(n)
        full[cols] = step
        q = integrate_coord(q, full, 1.0)
    return IkResult(best_q, best_res, iters)


def uvm_retarget(src: Motion, src_model, trg_model, solve_ik: bool = False) -> Motion:
    """Segment-direction-preserving keypoint retargeting.

    Each keypoint is rebuilt root-outward: the source unit vector from
    parent to child is rescaled to the target model's segment length.
    The base trajectory, when present, is transferred unchanged (position
    and orientation); for baseless motions the per-frame hip centroid
    serves as the root.  With ``solve_ik`` the per-frame joint angles of
    the target robot are estimated as well.
    """
    _require_complete(trg_model)
    lengths = trg_model.link_lengths
    n_frames = src.frame_count
    src_kp = src.keypoints
    if src.has_base:
        root = src.base_pos
    else:
        root = np.mean(src_kp[:, 0:4, :], axis=1)

    out = np.empty_like(src_kp)
    for j in range(N_KEYPOINTS):
        par = PARENT_INDEX[j]
        par_src = root if par < 0 else src_kp[:, par, :]
        par_trg = root if par < 0 else out[:, par, :]
        seg = src_kp[:, j, :] - par_src
        norms = np.linalg.norm(seg, axis=1)
        bad = np.nonzero(norms < 1e-9)[0]
        if bad.size:
            raise ValueError(
                f"zero-length source segment for keypoint {j} "
                f"('{src.keypoint_names[j]}') at frame {bad[0]}"
            )
        out[:, j, :] = par_trg + lengths[j] * seg / norms[:, None]

    result = Motion(
        fps=src.fps,
        keypoints=out,
        contacts=None if src.contacts is None else src.contacts.copy(),
        base_pos=None if src.base_pos is None else src.base_pos.copy(),
        base_quat=None if src.base_quat is None else src.base_quat.copy(),
        keypoint_names=tuple(src.keypoint_names),
    )
    if solve_ik:
        joints = np.empty((n_frames, trg_model.dof))
        guess = trg_model.neutral_coord()
        for i in range(n_frames):
            if result.has_base:
                guess = GeneralizedCoord(
                    result.base_pos[i], result.base_quat[i], guess.joints
                )
                sol = ik(trg_model, out[i], q_init=guess, lock_base=True)
            else:
                sol = ik(trg_model, out[i], q_init=guess)
            joints[i] = sol.q.joints
            guess = sol.q
        result.joint_angles = joints
    return result.validate()
