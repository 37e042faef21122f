"""Single-rigid-body dynamics with scheduled contacts.

The plant for the trajectory tracker: a floating rigid body driven by
per-foot contact forces, with massless legs.  Feet are first-order
kinematic states so the tracking cost can penalize foot placement;
stance feet stay put, swing feet integrate commanded velocities.

Packed layouts used by the kernels (and by the DDP solver):

* state ``x`` (25): position (3), quaternion wxyz (4), linear velocity in
  world (3), angular velocity in body frame (3), foot positions (12)
* control ``u`` (24): world-frame contact forces (12, zero on swing
  feet), swing-foot velocities (12)
* tangent (24): d-position, d-rotation (body), d-linvel, d-angvel, d-feet
"""

from dataclasses import dataclass

import numpy as np

from ._accel import maybe_njit
from .quatmath import quat_diff, quat_exp, quat_mul, quat_normalize, quat_to_mat

X_DIM = 25
TANGENT_DIM = 24
U_DIM = 24
GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class DynState:
    base_pos: np.ndarray
    base_quat: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray
    foot_pos: np.ndarray  # (4, 3)

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.base_pos, self.base_quat, self.lin_vel, self.ang_vel,
             self.foot_pos.reshape(-1)]
        )

    @classmethod
    def unpack(cls, x: np.ndarray) -> "DynState":
        return cls(
            x[0:3].copy(), x[3:7].copy(), x[7:10].copy(), x[10:13].copy(),
            x[13:25].reshape(4, 3).copy(),
        )

    def validate(self) -> "DynState":
        if abs(np.linalg.norm(self.base_quat) - 1.0) > 1e-9:
            raise ValueError("base_quat must be unit norm")
        return self


@dataclass
class DynControl:
    contact_forces: np.ndarray  # (4, 3), newtons, world frame
    swing_foot_vel: np.ndarray  # (4, 3), m/s

    def pack(self) -> np.ndarray:
        return np.concatenate(
            [self.contact_forces.reshape(-1), self.swing_foot_vel.reshape(-1)]
        )

    @classmethod
    def unpack(cls, u: np.ndarray) -> "DynControl":
        return cls(u[0:12].reshape(4, 3).copy(), u[12:24].reshape(4, 3).copy())


@maybe_njit
def _srb_step(x, u, contacts, dt, mass, inertia, inv_inertia, gvec):
    out = np.empty(X_DIM)
    pos = x[0:3]
    quat = x[3:7]
    vel = x[7:10]
    omega = x[10:13]

    f_tot = np.zeros(3)
    tau_w = np.zeros(3)
    for j in range(4):
        if contacts[j]:
            fj = u[3 * j : 3 * j + 3]
            rj = x[13 + 3 * j : 16 + 3 * j]
            f_tot[0] += fj[0]
            f_tot[1] += fj[1]
            f_tot[2] += fj[2]
            dx = rj[0] - pos[0]
            dy = rj[1] - pos[1]
            dz = rj[2] - pos[2]
            tau_w[0] += dy * fj[2] - dz * fj[1]
            tau_w[1] += dz * fj[0] - dx * fj[2]
            tau_w[2] += dx * fj[1] - dy * fj[0]

    rot = quat_to_mat(quat)
    tau_b = np.empty(3)
    for r in range(3):
        tau_b[r] = rot[0, r] * tau_w[0] + rot[1, r] * tau_w[1] + rot[2, r] * tau_w[2]

    iw = inertia @ omega
    coriolis = np.empty(3)
    coriolis[0] = omega[1] * iw[2] - omega[2] * iw[1]
    coriolis[1] = omega[2] * iw[0] - omega[0] * iw[2]
    coriolis[2] = omega[0] * iw[1] - omega[1] * iw[0]

    vel_new = np.empty(3)
    for r in range(3):
        vel_new[r] = vel[r] + dt * (f_tot[r] / mass + gvec[r])
    omega_new = omega + dt * (inv_inertia @ (tau_b - coriolis))

    # Semi-implicit: pose integrates the updated velocities.
    out[0:3] = pos + dt * vel_new
    out[3:7] = quat_normalize(quat_mul(quat, quat_exp(dt * omega_new)))
    out[7:10] = vel_new
    out[10:13] = omega_new
    for j in range(4):
        for r in range(3):
            if contacts[j]:
                out[13 + 3 * j + r] = x[13 + 3 * j + r]
            else:
                out[13 + 3 * j + r] = x[13 + 3 * j + r] + dt * u[12 + 3 * j + r]
    return out


@maybe_njit
def _srb_state_add(x, d):
    out = np.empty(X_DIM)
    out[0:3] = x[0:3] + d[0:3]
    out[3:7] = quat_normalize(quat_mul(x[3:7], quat_exp(d[3:6])))
    out[7:10] = x[7:10] + d[6:9]
    out[10:13] = x[10:13] + d[9:12]
    out[13:25] = x[13:25] + d[12:24]
    return out


@maybe_njit
def _srb_state_diff(x1, x0):
    out = np.empty(TANGENT_DIM)
    out[0:3] = x1[0:3] - x0[0:3]
    out[3:6] = quat_diff(x0[3:7], x1[3:7])
    out[6:9] = x1[7:10] - x0[7:10]
    out[9:12] = x1[10:13] - x0[10:13]
    out[12:24] = x1[13:25] - x0[13:25]
    return out


@maybe_njit
def _srb_rollout(x0, us, contacts, dt, mass, inertia, inv_inertia, gvec):
    h = us.shape[0]
    xs = np.empty((h + 1, X_DIM))
    xs[0] = x0
    for i in range(h):
        xs[i + 1] = _srb_step(xs[i], us[i], contacts[i], dt, mass, inertia, inv_inertia, gvec)
    return xs


@maybe_njit
def _srb_rollout_feedback(xs_nom, us_nom, ks, Ks, step_scale, contacts, dt,
                          mass, inertia, inv_inertia, gvec):
    h = us_nom.shape[0]
    xs = np.empty((h + 1, X_DIM))
    us = np.empty((h, U_DIM))
    xs[0] = xs_nom[0]
    for i in range(h):
        dx = _srb_state_diff(xs[i], xs_nom[i])
        us[i] = us_nom[i] + step_scale * ks[i] + Ks[i] @ dx
        xs[i + 1] = _srb_step(xs[i], us[i], contacts[i], dt, mass, inertia, inv_inertia, gvec)
    return xs, us


@maybe_njit
def _srb_fd_derivs(xs, us, contacts, dt, mass, inertia, inv_inertia, gvec, h_fd):
    """Central finite-difference dynamics Jacobians in tangent coordinates."""
    h = us.shape[0]
    fx = np.empty((h, TANGENT_DIM, TANGENT_DIM))
    fu = np.empty((h, TANGENT_DIM, U_DIM))
    for i in range(h):
        x = xs[i]
        u = us[i]
        x_next = _srb_step(x, u, contacts[i], dt, mass, inertia, inv_inertia, gvec)
        scale_x = np.empty(TANGENT_DIM)
        scale_x[0:3] = 1.0 + np.abs(x[0:3])
        scale_x[3:6] = 1.0
        scale_x[6:9] = 1.0 + np.abs(x[7:10])
        scale_x[9:12] = 1.0 + np.abs(x[10:13])
        scale_x[12:24] = 1.0 + np.abs(x[13:25])
        d = np.zeros(TANGENT_DIM)
        for k in range(TANGENT_DIM):
            hk = h_fd * scale_x[k]
            d[k] = hk
            xp = _srb_step(_srb_state_add(x, d), u, contacts[i], dt, mass, inertia, inv_inertia, gvec)
            d[k] = -hk
            xm = _srb_step(_srb_state_add(x, d), u, contacts[i], dt, mass, inertia, inv_inertia, gvec)
            d[k] = 0.0
            col = (_srb_state_diff(xp, x_next) - _srb_state_diff(xm, x_next)) / (2.0 * hk)
            for r in range(TANGENT_DIM):
                fx[i, r, k] = col[r]
        du = np.zeros(U_DIM)
        for k in range(U_DIM):
            hk = h_fd * (1.0 + abs(u[k]))
            du[k] = hk
            xp = _srb_step(x, u + du, contacts[i], dt, mass, inertia, inv_inertia, gvec)
            du[k] = -hk
            xm = _srb_step(x, u + du, contacts[i], dt, mass, inertia, inv_inertia, gvec)
            du[k] = 0.0
            col = (_srb_state_diff(xp, x_next) - _srb_state_diff(xm, x_next)) / (2.0 * hk)
            for r in range(TANGENT_DIM):
                fu[i, r, k] = col[r]
    return fx, fu


def nominal_force_cap(model) -> float:
    """Per-foot force magnitude cap implied by the joint torque limits.

    Uses half the mean leg length as the nominal lever arm.
    """
    lever = 0.5 * np.mean([model.leg_length(leg) for leg in range(4)])
    return float(np.mean(model.torque_limits) / max(lever, 1e-6))


def step(model, x: DynState, u: DynControl, contacts, dt: float) -> DynState:
    """One semi-implicit Euler step of the contact-scheduled rigid body."""
    if not 0 < dt <= 0.05:
        raise ValueError(f"dt must lie in (0, 0.05], got {dt}")
    contacts = np.asarray(contacts, dtype=bool).reshape(4)
    forces = u.contact_forces.copy()
    forces[~contacts] = 0.0
    packed_u = np.concatenate([forces.reshape(-1), u.swing_foot_vel.reshape(-1)])
    out = _srb_step(
        x.pack(), packed_u, contacts, float(dt),
        model.mass, model.body_inertia, np.linalg.inv(model.body_inertia), GRAVITY,
    )
    return DynState.unpack(out)


@maybe_njit
def _penalty_terms(u, contacts, mu, f_cap):
    total = 0.0
    for j in range(4):
        if not contacts[j]:
            continue
        fx = u[3 * j]
        fy = u[3 * j + 1]
        fz = u[3 * j + 2]
        neg = -fz
        if neg > 0.0:
            total += neg * neg
        tangential = np.sqrt(fx * fx + fy * fy)
        cone = tangential - mu * fz
        if cone > 0.0:
            total += cone * cone
        mag = np.sqrt(fx * fx + fy * fy + fz * fz)
        over = mag - f_cap
        if over > 0.0:
            total += over * over
    return total


def soft_constraints(model, x: DynState, u: DynControl, contacts, mu: float = 0.7) -> float:
    """Quadratic penalty on friction cone, unilateral force and force cap.

    Zero exactly when every stance-foot force satisfies all three
    conditions; swing feet contribute nothing.
    """
    contacts = np.asarray(contacts, dtype=bool).reshape(4)
    return float(
        _penalty_terms(u.pack(), contacts, float(mu), nominal_force_cap(model))
    )


def mechanical_energy(model, x: DynState) -> float:
    """Kinetic plus gravitational potential energy of the rigid body."""
    ke = 0.5 * model.mass * float(x.lin_vel @ x.lin_vel)
    ke += 0.5 * float(x.ang_vel @ model.body_inertia @ x.ang_vel)
    return ke + model.mass * 9.81 * float(x.base_pos[2])


def shadow_energy(model, x: DynState, dt: float) -> float:
    """Discrete energy conserved exactly by the semi-implicit integrator
    in force-free flight (plain energy drifts by ``m*g^2*dt^2/2`` per step).
    """
    return mechanical_energy(model, x) + 0.5 * model.mass * dt * float(GRAVITY @ x.lin_vel)
