"""Spatial motion retargeting.

Rebuilds a kinematically feasible whole-body trajectory from keypoint
motion, with or without base-pose information.  Frames are solved
sequentially: per-frame inverse kinematics provides a reference
velocity, and a small velocity-level QP tracks it subject to linearized
foot constraints that pin stance feet to ground anchors.  Flight phases
(no stance feet) switch the base reference to an exact ballistic
parabola seeded by a polynomial fit of the recent base history.

When the source has no usable base trajectory the reference carries no
global translation; the base motion then emerges from the interplay of
joint references and foot anchoring, which is exactly what allows
reconstruction from baseless keypoints.
"""

from dataclasses import dataclass, field

import numpy as np

from .kinematics import (
    GeneralizedCoord,
    GeneralizedVelocity,
    coord_difference,
    fk,
    fk_frames,
    ik,
    integrate_coord,
    _jacobian_all,
)
from .motion import FOOT_INDEX, Heightmap, Motion
from .qp import QpProblem, QpSettings, STATUS_PRIMAL_INFEASIBLE, solve_qp

GRAVITY_VEC = np.array([0.0, 0.0, -9.81])


class SmrError(RuntimeError):
    """Raised when a frame's QP or the initial IK fails."""


@dataclass
class FootAnchors:
    """Ground anchor per foot; ``active`` marks enforceable anchors."""

    anchors: np.ndarray  # (4, 3)
    active: np.ndarray  # (4,) bool

    @classmethod
    def from_feet(cls, feet: np.ndarray, terrain: Heightmap, active) -> "FootAnchors":
        anchors = np.stack([project_ground(feet[j], terrain) for j in range(4)])
        return cls(anchors, np.asarray(active, dtype=bool).copy())


@dataclass
class SmrConfig:
    k_q: float = 1.0          # reference-error gain, 1/s
    k_p: float = 1.0          # foot-constraint gain, 1/s
    eta: float = 0.5          # inner-loop integration step
    qdot_thres: float = 1e-4  # inner-loop convergence (inf-norm)
    q_weights: np.ndarray | None = None  # explicit (M+6,) diagonal
    polyfit_horizon: int = 10
    max_inner_iters: int = 50
    base_pos_weight: float = 10.0
    base_rot_weight: float = 5.0
    joint_weight: float = 1.0
    swing_margin: float = 0.0  # extra clearance under swing feet, meters
    ik_weights: np.ndarray | None = None

    def weights(self, model, baseless: bool = False) -> np.ndarray:
        """Diagonal tracking weights over [base pos, base rot, joints].

        For baseless input the horizontal base reference carries no
        information (it is exactly what gets reconstructed), so its
        weight drops to the joint level; height and orientation
        references remain meaningful local signals.
        """
        if self.q_weights is not None:
            w = np.asarray(self.q_weights, dtype=float)
            if w.shape != (model.dof + 6,):
                raise ValueError(f"q_weights must have shape ({model.dof + 6},)")
            return w
        w = np.concatenate(
            [
                np.full(3, self.base_pos_weight),
                np.full(3, self.base_rot_weight),
                np.full(model.dof, self.joint_weight),
            ]
        )
        if baseless:
            w[0:2] = np.minimum(w[0:2], self.joint_weight)
        return w


@dataclass
class SmrTrace:
    """Per-run diagnostics; flight reference values feed the ballistic checks."""

    flight_ref_base: dict = field(default_factory=dict)  # frame -> reference base pos
    flight_segments: list = field(default_factory=list)  # (start_frame, base0, v_exit)
    clamped_joints: np.ndarray | None = None
    output_contacts: np.ndarray | None = None


def project_ground(p: np.ndarray, terrain: Heightmap) -> np.ndarray:
    """Drop a point vertically onto the terrain."""
    p = np.asarray(p, dtype=float)
    return np.array([p[0], p[1], terrain.height_at(p[0], p[1])])


def fit_exit_velocity(base_history: np.ndarray, dt: float) -> np.ndarray:
    """Velocity at the newest sample from a per-axis polynomial fit.

    Degree is ``min(samples - 1, 3)``, so short histories degrade
    gracefully to linear/constant fits.
    """
    hist = np.asarray(base_history, dtype=float).reshape(-1, 3)
    k = hist.shape[0]
    if k < 2:
        raise ValueError(f"need at least 2 base samples, got {k}")
    deg = min(k - 1, 3)
    t = np.arange(k) * dt
    v = np.empty(3)
    for axis in range(3):
        coef = np.polyfit(t, hist[:, axis], deg)
        v[axis] = np.polyval(np.polyder(coef), t[-1])
    return v


def smr_frame(
    model,
    q_prev: GeneralizedCoord,
    q_ref_dot,
    anchors: FootAnchors,
    contacts,
    cfg: SmrConfig,
    dt: float,
    terrain: Heightmap | None = None,
    weights: np.ndarray | None = None,
) -> GeneralizedCoord:
    """Solve one frame of the sequential retargeting.

    Integrates the reference velocity into a target pose, then iterates
    solve-QP / integrate steps until the velocity solution is (near)
    zero.  Feet with ``contacts[j] and anchors.active[j]`` are driven
    onto their anchors via linearized equality rows; other feet get a
    one-sided height bound when they dip below the terrain.
    """
    if isinstance(q_ref_dot, GeneralizedVelocity):
        q_ref_dot = q_ref_dot.as_vector()
    contacts = np.asarray(contacts, dtype=bool).reshape(4)
    if weights is None:
        weights = cfg.weights(model)
    n = weights.shape[0]
    q_tilde = integrate_coord(q_prev, q_ref_dot, dt)
    q = q_prev.copy()
    p_mat = np.diag(weights)

    for _ in range(cfg.max_inner_iters):
        kp, jpos, jaxis_w = fk_frames(model, q)
        jac = _jacobian_all(q.base_pos, q.base_quat, kp, jpos, jaxis_w,
                            model.kin_joint_parent, model.kin_kp_joint)
        delta_ref = cfg.k_q * coord_difference(q_tilde, q)

        rows = []
        lower = []
        upper = []
        for j in range(4):
            foot = FOOT_INDEX[j]
            if contacts[j] and anchors.active[j]:
                err = cfg.k_p * (anchors.anchors[j] - kp[foot])
                rows.append(jac[foot])
                lower.extend(err)
                upper.extend(err)
            elif terrain is not None:
                floor = terrain.height_at(kp[foot][0], kp[foot][1]) + cfg.swing_margin
                if kp[foot][2] < floor:
                    rows.append(jac[foot][2:3])
                    lower.append(cfg.k_p * (floor - kp[foot][2]))
                    upper.append(np.inf)
        a_mat = np.vstack(rows) if rows else np.zeros((0, n))
        prob = QpProblem(p_mat, -weights * delta_ref, a_mat,
                         np.asarray(lower), np.asarray(upper))
        result = solve_qp(prob, QpSettings())
        if result.status == STATUS_PRIMAL_INFEASIBLE:
            raise SmrError("frame QP primal infeasible")
        qdot = result.x
        q = integrate_coord(q, qdot, cfg.eta)
        if np.max(np.abs(qdot)) < cfg.qdot_thres:
            break
    return q


def smr(
    model,
    src: Motion,
    contacts: np.ndarray | None = None,
    terrain: Heightmap | None = None,
    cfg: SmrConfig | None = None,
    use_source_base: bool = True,
    return_trace: bool = False,
):
    """Sequential whole-body reconstruction under foot constraints.

    Returns a motion with generalized coordinates (base pose + joint
    angles), keypoints from forward kinematics, and the output contact
    schedule (input schedule plus any penetration-induced contacts).
    With ``use_source_base=False`` the global base trajectory is
    reconstructed purely from local keypoint motion and the contact
    schedule.
    """
    cfg = cfg or SmrConfig()
    terrain = terrain or Heightmap.flat(0.0)
    if contacts is None:
        if src.contacts is None:
            raise ValueError("contact schedule required (none stored in motion)")
        contacts = src.contacts
    c_out = np.asarray(contacts, dtype=bool).copy()
    n_frames = src.frame_count
    if c_out.shape != (n_frames, 4):
        raise ValueError(f"contacts must have shape ({n_frames}, 4)")
    dt = 1.0 / src.fps
    kp_src = src.keypoints

    # Frame 0: plain IK, then settle stance feet onto the terrain.
    q_init = model.neutral_coord()
    if use_source_base and src.has_base:
        q_init = GeneralizedCoord(src.base_pos[0], src.base_quat[0], q_init.joints)
    ik0 = ik(model, kp_src[0], weights=cfg.ik_weights, q_init=q_init,
             lock_base=not use_source_base)
    if ik0.residual > 0.05 * max(1.0, float(np.max(model.link_lengths))):
        raise SmrError(f"initial IK residual too large: {ik0.residual:.4f} m")
    q0 = ik0.q
    feet0 = fk(model, q0)[FOOT_INDEX]
    if c_out[0].any():
        gaps = [terrain.height_at(f[0], f[1]) - f[2] for f, c in zip(feet0, c_out[0]) if c]
        q0 = GeneralizedCoord(
            q0.base_pos + np.array([0.0, 0.0, float(np.mean(gaps))]),
            q0.base_quat, q0.joints,
        )
        feet0 = fk(model, q0)[FOOT_INDEX]
    anchors = FootAnchors.from_feet(feet0, terrain, c_out[0])

    q_bar = [q0]
    q_weights = cfg.weights(model, baseless=not use_source_base)
    trace = SmrTrace()
    trace.clamped_joints = np.zeros(n_frames, dtype=int)
    q_ik_prev = ik0.q
    v_exit = None
    ref_base = None

    for i in range(1, n_frames):
        sol = ik(model, kp_src[i], weights=cfg.ik_weights, q_init=q_ik_prev)
        qdot_ik = coord_difference(sol.q, q_ik_prev) / dt
        q_ik_prev = sol.q

        if not c_out[i].any():
            if ref_base is None:
                history = np.stack(
                    [qb.base_pos for qb in q_bar[max(0, i - cfg.polyfit_horizon):]]
                )
                v_exit = (fit_exit_velocity(history, dt) if history.shape[0] >= 2
                          else np.zeros(3))
                ref_base = q_bar[i - 1].base_pos.copy()
                trace.flight_segments.append((i, ref_base.copy(), v_exit.copy()))
            # Midpoint update keeps the reference on the exact parabola.
            ref_base = ref_base + v_exit * dt + 0.5 * GRAVITY_VEC * dt * dt
            v_exit = v_exit + GRAVITY_VEC * dt
            qdot_ik[0:3] = (ref_base - q_bar[i - 1].base_pos) / dt
            trace.flight_ref_base[i] = ref_base.copy()
        else:
            v_exit = None
            ref_base = None

        try:
            q_i = smr_frame(model, q_bar[i - 1], qdot_ik, anchors, c_out[i], cfg, dt,
                            terrain, weights=q_weights)
        except SmrError as exc:
            raise SmrError(f"frame {i}: {exc}") from exc

        clamped = np.clip(q_i.joints, model.joint_lower, model.joint_upper)
        trace.clamped_joints[i] = int(np.sum(np.abs(clamped - q_i.joints) > 1e-12))
        q_i = GeneralizedCoord(q_i.base_pos, q_i.base_quat, clamped)

        feet = fk(model, q_i)[FOOT_INDEX]
        for j in range(4):
            # The swing-foot bound keeps feet within its convergence
            # tolerance of the terrain, so only genuine penetration (past
            # the 1 mm guarantee) forces an unscheduled contact; feet that
            # merely graze the ground ride it until the scheduled stance.
            if feet[j][2] < terrain.height_at(feet[j][0], feet[j][1]) - 1e-3:
                c_out[i, j] = True
            if c_out[i, j] and not c_out[i - 1, j]:
                anchors.anchors[j] = project_ground(feet[j], terrain)
            anchors.active[j] = c_out[i, j]
        q_bar.append(q_i)

    keypoints = np.stack([fk(model, qb) for qb in q_bar])
    out = Motion(
        fps=src.fps,
        keypoints=keypoints,
        contacts=c_out,
        base_pos=np.stack([qb.base_pos for qb in q_bar]),
        base_quat=np.stack([qb.base_quat for qb in q_bar]),
        joint_angles=np.stack([qb.joints for qb in q_bar]),
        keypoint_names=tuple(src.keypoint_names),
    ).validate()
    trace.output_contacts = c_out
    if return_trace:
        return out, trace
    return out
