"""Quaternion and rotation-vector helpers.

Quaternions are ``[w, x, y, z]`` float64 arrays and are kept unit-norm by
the callers.  Angular quantities follow the body-frame convention used
throughout the package: a tangent increment ``d`` applied on the right,
``q * exp(d)``, and angular velocities expressed in the body frame.
"""

import numpy as np

from ._accel import maybe_njit

_EPS = 1e-12


@maybe_njit
def quat_normalize(q):
    n = np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    out = np.empty(4)
    if n < _EPS:
        out[0] = 1.0
        out[1] = 0.0
        out[2] = 0.0
        out[3] = 0.0
        return out
    for i in range(4):
        out[i] = q[i] / n
    return out


@maybe_njit
def quat_mul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@maybe_njit
def quat_conj(q):
    out = np.empty(4)
    out[0] = q[0]
    out[1] = -q[1]
    out[2] = -q[2]
    out[3] = -q[3]
    return out


@maybe_njit
def quat_rotate(q, v):
    """Rotate vector ``v`` by unit quaternion ``q`` (body to world)."""
    # q * (0, v) * conj(q), expanded.
    tx = 2.0 * (q[2] * v[2] - q[3] * v[1])
    ty = 2.0 * (q[3] * v[0] - q[1] * v[2])
    tz = 2.0 * (q[1] * v[1] - q[2] * v[0])
    out = np.empty(3)
    out[0] = v[0] + q[0] * tx + (q[2] * tz - q[3] * ty)
    out[1] = v[1] + q[0] * ty + (q[3] * tx - q[1] * tz)
    out[2] = v[2] + q[0] * tz + (q[1] * ty - q[2] * tx)
    return out


@maybe_njit
def quat_to_mat(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    out = np.empty((3, 3))
    out[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[0, 1] = 2.0 * (x * y - w * z)
    out[0, 2] = 2.0 * (x * z + w * y)
    out[1, 0] = 2.0 * (x * y + w * z)
    out[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[1, 2] = 2.0 * (y * z - w * x)
    out[2, 0] = 2.0 * (x * z - w * y)
    out[2, 1] = 2.0 * (y * z + w * x)
    out[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


@maybe_njit
def quat_exp(rotvec):
    """Exponential map: rotation vector to unit quaternion."""
    angle = np.sqrt(rotvec[0] ** 2 + rotvec[1] ** 2 + rotvec[2] ** 2)
    out = np.empty(4)
    half = 0.5 * angle
    if angle < 1e-10:
        # Second-order series keeps exp/log inverses consistent near zero.
        s = 0.5 - angle * angle / 48.0
        out[0] = 1.0 - half * half / 2.0
    else:
        s = np.sin(half) / angle
        out[0] = np.cos(half)
    out[1] = rotvec[0] * s
    out[2] = rotvec[1] * s
    out[3] = rotvec[2] * s
    return quat_normalize(out)


@maybe_njit
def quat_log(q):
    """Logarithmic map: unit quaternion to rotation vector."""
    w = q[0]
    sign = 1.0
    if w < 0.0:  # shortest arc
        sign = -1.0
        w = -w
    vn = np.sqrt(q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    out = np.empty(3)
    if vn < 1e-10:
        scale = sign * 2.0 / max(w, _EPS)
    else:
        scale = sign * 2.0 * np.arctan2(vn, w) / vn
    out[0] = q[1] * scale
    out[1] = q[2] * scale
    out[2] = q[3] * scale
    return out


@maybe_njit
def quat_diff(q_from, q_to):
    """Rotation vector ``d`` with ``q_to = q_from * exp(d)``."""
    return quat_log(quat_mul(quat_conj(q_from), q_to))


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Quaternion for extrinsic x-y-z (roll, pitch, yaw) rotations."""
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.array(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
    )


def quat_to_rpy(q: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_from_rpy`; pitch is clamped at the gimbal lock."""
    w, x, y, z = q
    sinp = 2.0 * (w * y - z * x)
    sinp = min(1.0, max(-1.0, sinp))
    return np.array(
        [
            np.arctan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y)),
            np.arcsin(sinp),
            np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z)),
        ]
    )


def quat_slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation along the shortest arc."""
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-10:
        return quat_normalize(a + t * (b - a))
    theta = np.arccos(min(1.0, dot))
    s = np.sin(theta)
    return quat_normalize(
        (np.sin((1.0 - t) * theta) / s) * a + (np.sin(t * theta) / s) * b
    )
