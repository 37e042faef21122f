"""Motion data model, file I/O, time warping, filtering and contact detection.

A motion is a time-indexed set of 16 keypoints (four hips, four thighs,
four knees, four feet, each group ordered FL, FR, RL, RR) with optional
per-foot contact booleans, base pose and joint angles.

Motion JSON schema::

    {
      "fps": 30.0,
      "keypoint_names": ["FL_hip", ..., "RR_foot"],     # 16 names
      "frames": [
        {
          "keypoints": [[x, y, z], ...],                # 16 entries, meters
          "contacts": [true, false, false, true],       # optional, FL FR RL RR
          "base_pos": [x, y, z],                        # optional, meters
          "base_quat": [w, x, y, z],                    # optional, unit norm
          "joints": [...]                               # optional, radians
        },
        ...
      ]
    }

Optional fields must be present either in every frame or in none.

Heightmap JSON schema::

    {
      "cell_size": 0.05,          # meters
      "origin": [x0, y0],         # world position of grid cell (0, 0)
      "default_height": 0.0,      # height outside the grid
      "grid": [[h, ...], ...]     # grid[iy][ix], row index along +y
    }
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ._accel import maybe_njit

N_KEYPOINTS = 16
N_FEET = 4
LEGS = ("FL", "FR", "RL", "RR")
KEYPOINT_GROUPS = ("hip", "thigh", "knee", "foot")
CANONICAL_KEYPOINT_NAMES = tuple(
    f"{leg}_{group}" for group in KEYPOINT_GROUPS for leg in LEGS
)
FOOT_SLICE = slice(12, 16)

# Keypoint tree: hips hang off the base, then thigh, knee, foot per leg.
PARENT_INDEX = np.array([-1, -1, -1, -1, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11])
FOOT_INDEX = np.array([12, 13, 14, 15])


class MotionFormatError(ValueError):
    """Raised for malformed motion/heightmap files or invariant violations."""


@dataclass
class Motion:
    """Keypoint trajectories plus optional contacts, base pose and joints.

    Arrays share the frame axis: ``keypoints`` is ``(T+1, 16, 3)``,
    ``contacts`` is ``(T+1, 4)`` bool, ``base_pos`` ``(T+1, 3)``,
    ``base_quat`` ``(T+1, 4)`` in wxyz order and ``joint_angles``
    ``(T+1, M)``.
    """

    fps: float
    keypoints: np.ndarray
    contacts: np.ndarray | None = None
    base_pos: np.ndarray | None = None
    base_quat: np.ndarray | None = None
    joint_angles: np.ndarray | None = None
    keypoint_names: tuple = CANONICAL_KEYPOINT_NAMES

    @property
    def frame_count(self) -> int:
        return self.keypoints.shape[0]

    @property
    def last_frame(self) -> int:
        return self.frame_count - 1

    @property
    def duration(self) -> float:
        return self.last_frame / self.fps

    @property
    def feet(self) -> np.ndarray:
        return self.keypoints[:, FOOT_SLICE, :]

    @property
    def has_base(self) -> bool:
        return self.base_pos is not None and self.base_quat is not None

    def validate(self) -> "Motion":
        if self.fps <= 0:
            raise MotionFormatError(f"fps must be positive, got {self.fps}")
        kp = np.asarray(self.keypoints, dtype=float)
        if kp.ndim != 3 or kp.shape[1:] != (N_KEYPOINTS, 3):
            raise MotionFormatError(
                f"keypoints must have shape (T+1, {N_KEYPOINTS}, 3), got {kp.shape}"
            )
        n = kp.shape[0]
        if n < 2:
            raise MotionFormatError(f"motion needs at least 2 frames, got {n}")
        if len(self.keypoint_names) != N_KEYPOINTS:
            raise MotionFormatError(
                f"expected {N_KEYPOINTS} keypoint names, got {len(self.keypoint_names)}"
            )
        self._check_finite("keypoints", kp)
        self.keypoints = kp
        if self.contacts is not None:
            c = np.asarray(self.contacts)
            if c.shape != (n, N_FEET):
                raise MotionFormatError(
                    f"contacts must have shape ({n}, {N_FEET}), got {c.shape}"
                )
            self.contacts = c.astype(bool)
        if (self.base_pos is None) != (self.base_quat is None):
            raise MotionFormatError("base_pos and base_quat must be given together")
        if self.base_pos is not None:
            bp = np.asarray(self.base_pos, dtype=float)
            bq = np.asarray(self.base_quat, dtype=float)
            if bp.shape != (n, 3):
                raise MotionFormatError(f"base_pos must have shape ({n}, 3), got {bp.shape}")
            if bq.shape != (n, 4):
                raise MotionFormatError(f"base_quat must have shape ({n}, 4), got {bq.shape}")
            self._check_finite("base_pos", bp)
            self._check_finite("base_quat", bq)
            norms = np.linalg.norm(bq, axis=1)
            bad = np.nonzero(np.abs(norms - 1.0) > 1e-9)[0]
            if bad.size:
                raise MotionFormatError(
                    f"base_quat must be unit norm: frame {bad[0]} has norm {norms[bad[0]]:.12g}"
                )
            self.base_pos, self.base_quat = bp, bq
        if self.joint_angles is not None:
            ja = np.asarray(self.joint_angles, dtype=float)
            if ja.ndim != 2 or ja.shape[0] != n:
                raise MotionFormatError(
                    f"joint_angles must have shape ({n}, M), got {ja.shape}"
                )
            self._check_finite("joint_angles", ja)
            self.joint_angles = ja
        return self

    @staticmethod
    def _check_finite(name: str, arr: np.ndarray) -> None:
        if not np.all(np.isfinite(arr)):
            frame = int(np.nonzero(~np.isfinite(arr).reshape(arr.shape[0], -1).all(axis=1))[0][0])
            raise MotionFormatError(f"{name} contains non-finite values at frame {frame}")

    def copy(self) -> "Motion":
        return Motion(
            fps=self.fps,
            keypoints=self.keypoints.copy(),
            contacts=None if self.contacts is None else self.contacts.copy(),
            base_pos=None if self.base_pos is None else self.base_pos.copy(),
            base_quat=None if self.base_quat is None else self.base_quat.copy(),
            joint_angles=None if self.joint_angles is None else self.joint_angles.copy(),
            keypoint_names=tuple(self.keypoint_names),
        )

    def strip_base(self) -> "Motion":
        """Re-express keypoints in the per-frame base frame and drop the base.

        This produces a baseless motion whose keypoints keep only local
        information, for reconstruction experiments.
        """
        if not self.has_base:
            raise ValueError("motion has no base pose to strip")
        from .quatmath import quat_to_mat

        out = self.copy()
        local = np.empty_like(self.keypoints)
        for i in range(self.frame_count):
            rot = quat_to_mat(self.base_quat[i])
            local[i] = (self.keypoints[i] - self.base_pos[i]) @ rot
        out.keypoints = local
        out.base_pos = None
        out.base_quat = None
        out.joint_angles = None
        return out


@dataclass
class TemporalParams:
    """Per-segment time-scale factors with elementwise bounds."""

    alphas: np.ndarray
    bounds: tuple = (0.5, 2.0)

    def __post_init__(self):
        self.alphas = np.atleast_1d(np.asarray(self.alphas, dtype=float))
        lo, hi = self.bounds
        if self.alphas.size < 1:
            raise ValueError("at least one segment scale is required")
        if lo <= 0 or hi < lo:
            raise ValueError(f"invalid bounds ({lo}, {hi})")
        if np.any(self.alphas < lo) or np.any(self.alphas > hi):
            raise ValueError(
                f"scales {self.alphas} outside bounds [{lo}, {hi}]"
            )

    @property
    def segment_count(self) -> int:
        return self.alphas.size

    @classmethod
    def identity(cls, segment_count: int = 1, bounds: tuple = (0.5, 2.0)) -> "TemporalParams":
        return cls(np.ones(segment_count), bounds)

    def warped_duration(self, duration: float) -> float:
        return duration / self.segment_count * float(np.sum(self.alphas))


@dataclass
class Heightmap:
    """Grid of terrain heights; queries outside the grid return a default.

    ``grid[iy, ix]`` covers the square ``[x0 + ix*cs, x0 + (ix+1)*cs) x
    [y0 + iy*cs, y0 + (iy+1)*cs)``.
    """

    grid: np.ndarray
    cell_size: float
    origin: tuple = (0.0, 0.0)
    default_height: float = 0.0

    def __post_init__(self):
        self.grid = np.atleast_2d(np.asarray(self.grid, dtype=float))
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")

    @classmethod
    def flat(cls, height: float = 0.0) -> "Heightmap":
        return cls(np.array([[height]]), 1.0, (0.0, 0.0), height)

    def height_at(self, x: float, y: float) -> float:
        ix = int(np.floor((x - self.origin[0]) / self.cell_size))
        iy = int(np.floor((y - self.origin[1]) / self.cell_size))
        ny, nx = self.grid.shape
        if 0 <= ix < nx and 0 <= iy < ny:
            return float(self.grid[iy, ix])
        return float(self.default_height)

    def heights(self, xy: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(xy)
        return np.array([self.height_at(p[0], p[1]) for p in pts])


def load_heightmap(path) -> Heightmap:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MotionFormatError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return Heightmap(
            grid=np.asarray(doc["grid"], dtype=float),
            cell_size=float(doc["cell_size"]),
            origin=tuple(doc.get("origin", (0.0, 0.0))),
            default_height=float(doc.get("default_height", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MotionFormatError(f"{path}: bad heightmap ({exc})") from exc


def save_heightmap(terrain: Heightmap, path) -> None:
    doc = {
        "cell_size": terrain.cell_size,
        "origin": list(terrain.origin),
        "default_height": terrain.default_height,
        "grid": terrain.grid.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_motion(path) -> Motion:
    """Read a motion JSON file and validate all invariants."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MotionFormatError(
                f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
    for key in ("fps", "frames"):
        if key not in doc:
            raise MotionFormatError(f"{path}: missing required field '{key}'")
    frames = doc["frames"]
    if not frames:
        raise MotionFormatError(f"{path}: 'frames' is empty")

    def gather(name, required=False):
        present = [name in fr for fr in frames]
        if not any(present):
            if required:
                raise MotionFormatError(f"{path}: frame 0 is missing '{name}'")
            return None
        if not all(present):
            bad = present.index(False)
            raise MotionFormatError(
                f"{path}: field '{name}' present in frame 0 but missing in frame {bad}"
            )
        try:
            return np.asarray([fr[name] for fr in frames], dtype=float)
        except (TypeError, ValueError) as exc:
            raise MotionFormatError(f"{path}: field '{name}' is ragged ({exc})") from exc

    contacts = gather("contacts")
    motion = Motion(
        fps=float(doc["fps"]),
        keypoints=gather("keypoints", required=True),
        contacts=None if contacts is None else contacts.astype(bool),
        base_pos=gather("base_pos"),
        base_quat=gather("base_quat"),
        joint_angles=gather("joints"),
        keypoint_names=tuple(doc.get("keypoint_names", CANONICAL_KEYPOINT_NAMES)),
    )
    try:
        return motion.validate()
    except MotionFormatError as exc:
        raise MotionFormatError(f"{path}: {exc}") from exc


def save_motion(motion: Motion, path) -> None:
    """Write a motion JSON file; floats round-trip bit-exactly."""
    motion.validate()
    frames = []
    for i in range(motion.frame_count):
        fr = {"keypoints": motion.keypoints[i].tolist()}
        if motion.contacts is not None:
            fr["contacts"] = [bool(v) for v in motion.contacts[i]]
        if motion.base_pos is not None:
            fr["base_pos"] = motion.base_pos[i].tolist()
            fr["base_quat"] = motion.base_quat[i].tolist()
        if motion.joint_angles is not None:
            fr["joints"] = motion.joint_angles[i].tolist()
        frames.append(fr)
    doc = {
        "fps": motion.fps,
        "keypoint_names": list(motion.keypoint_names),
        "frames": frames,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def warp_knots(params: TemporalParams, duration: float):
    """Knot vectors of the piecewise-linear control-to-source time map.

    The source timeline splits into ``S`` equal segments; segment ``s``
    plays back over ``alphas[s]`` times its source duration.
    """
    seg = duration / params.segment_count
    control = np.concatenate(([0.0], np.cumsum(params.alphas) * seg))
    source = np.arange(params.segment_count + 1) * seg
    return control, source


def deform_time(t: float, params: TemporalParams, duration: float) -> float:
    """Map control time ``t`` to source-motion time.

    Monotone piecewise-linear with ``deform_time(0) == 0`` and
    ``deform_time(warped_duration) == duration``.
    """
    control, source = warp_knots(params, duration)
    total = control[-1]
    tol = 1e-9 * max(1.0, total)
    if t < -tol or t > total + tol:
        raise ValueError(f"time {t} outside warped range [0, {total}]")
    return float(np.interp(min(max(t, 0.0), total), control, source))


def interp_keypoints(t_src: float, motion: Motion) -> np.ndarray:
    """Linear interpolation of keypoints at a continuous source time."""
    duration = motion.duration
    tol = 1e-9 * max(1.0, duration)
    if t_src < -tol or t_src > duration + tol:
        raise ValueError(f"time {t_src} outside motion range [0, {duration}]")
    f = min(max(t_src, 0.0), duration) * motion.fps
    i0 = min(int(np.floor(f)), motion.last_frame - 1)
    w = f - i0
    return (1.0 - w) * motion.keypoints[i0] + w * motion.keypoints[i0 + 1]


@maybe_njit
def _filtfilt_single_pole(signal, alpha):
    n, k = signal.shape
    out = signal.copy()
    for j in range(k):
        acc = out[0, j]
        for i in range(1, n):
            acc += alpha * (out[i, j] - acc)
            out[i, j] = acc
        acc = out[n - 1, j]
        for i in range(n - 2, -1, -1):
            acc += alpha * (out[i, j] - acc)
            out[i, j] = acc
    return out


def lowpass(signal: np.ndarray, cutoff_hz: float, fps: float) -> np.ndarray:
    """Zero-phase single-pole low-pass filter (forward-backward).

    Zero phase keeps contact timing unshifted when filtering foot
    trajectories before velocity thresholding.
    """
    if not 0 < cutoff_hz < fps / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie in (0, fps/2={fps / 2})")
    arr = np.asarray(signal, dtype=float)
    flat = arr.reshape(arr.shape[0], -1)
    dt = 1.0 / fps
    rc = 1.0 / (2.0 * np.pi * cutoff_hz)
    alpha = dt / (rc + dt)
    return _filtfilt_single_pole(np.ascontiguousarray(flat), alpha).reshape(arr.shape)


def detect_contacts(
    motion: Motion,
    vel_threshold: float = 0.05,
    cutoff_hz: float = 6.0,
    terrain: Heightmap | None = None,
    height_tol: float = 0.01,
) -> np.ndarray:
    """Per-foot contact schedule from filtered foot speed and height.

    A foot is in contact when its filtered speed is below
    ``vel_threshold`` and its filtered height is within ``height_tol`` of
    the terrain.  Without a heightmap the per-foot minimum filtered
    height stands in for the terrain, which makes the schedule invariant
    to rigid offsets of the whole motion.
    """
    if motion.frame_count < 2:
        raise ValueError("contact detection needs at least 2 frames")
    feet = motion.feet  # (T+1, 4, 3)
    filt = lowpass(feet.reshape(feet.shape[0], -1), cutoff_hz, motion.fps)
    filt = filt.reshape(feet.shape)
    vel = np.gradient(filt, axis=0) * motion.fps
    speed = np.linalg.norm(vel, axis=2)
    z = filt[:, :, 2]
    if terrain is None:
        ground = np.min(z, axis=0)[None, :]
    else:
        ground = np.empty_like(z)
        for j in range(N_FEET):
            ground[:, j] = terrain.heights(filt[:, j, :2])
    return (speed < vel_threshold) & (z <= ground + height_tol)
