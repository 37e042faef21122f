"""Quantitative evaluation of retargeted motions.

Distances are L1 throughout: the time-warp-invariant keypoint error uses
dynamic time warping with per-frame cost equal to the mean keypoint L1
distance, and foot slide is the L1 displacement between the first and
last frame of each qualifying contact segment.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import maybe_njit
from .motion import Motion

MM = 1000.0


@dataclass
class MetricsReport:
    dtw_l1_mm: float | None = None
    dtw_normalized_pct: float | None = None
    foot_slide_mm: np.ndarray | None = None  # per foot, NaN when no segment
    foot_slide_mean_mm: float | None = None
    contact_iou: float | None = None
    travel_distance_m: float | None = None
    recovery_rate_pct: float | None = None

    def as_dict(self) -> dict:
        def val(x):
            if x is None:
                return ""
            if isinstance(x, float) and not np.isfinite(x):
                return ""
            return x

        per_foot = [""] * 4
        if self.foot_slide_mm is not None:
            per_foot = ["" if not np.isfinite(v) else float(v) for v in self.foot_slide_mm]
        return {
            "dtw_l1_mm": val(self.dtw_l1_mm),
            "dtw_normalized_pct": val(self.dtw_normalized_pct),
            "foot_slide_mean_mm": val(self.foot_slide_mean_mm),
            "foot_slide_FL_mm": per_foot[0],
            "foot_slide_FR_mm": per_foot[1],
            "foot_slide_RL_mm": per_foot[2],
            "foot_slide_RR_mm": per_foot[3],
            "contact_iou": val(self.contact_iou),
            "travel_distance_m": val(self.travel_distance_m),
            "recovery_rate_pct": val(self.recovery_rate_pct),
        }


@maybe_njit
def _dtw_accumulate(cost):
    na, nb = cost.shape
    acc = np.empty((na, nb))
    acc[0, 0] = cost[0, 0]
    for j in range(1, nb):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, na):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        for j in range(1, nb):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = cost[i, j] + best
    # Backtrack to count path steps for the path-average cost.
    i = na - 1
    j = nb - 1
    steps = 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            d = acc[i - 1, j - 1]
            up = acc[i - 1, j]
            left = acc[i, j - 1]
            if d <= up and d <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        steps += 1
    return acc[na - 1, nb - 1], steps


def dtw_keypoint_l1(a: Motion, b: Motion) -> float:
    """Path-average DTW cost between keypoint trajectories, in mm.

    Per-frame cost is the mean over keypoints of the 3-axis L1 distance,
    so a uniform time warp of one motion leaves the value at zero.
    """
    if a.keypoints.shape[1] != b.keypoints.shape[1]:
        raise ValueError("motions have different keypoint counts")
    if a.frame_count == 0 or b.frame_count == 0:
        raise ValueError("empty motion")
    pa = a.keypoints
    pb = b.keypoints
    cost = np.abs(pa[:, None, :, :] - pb[None, :, :, :]).sum(axis=3).mean(axis=2)
    total, steps = _dtw_accumulate(np.ascontiguousarray(cost))
    return float(total) / float(steps) * MM


def trajectory_length(motion: Motion) -> float:
    """Total base path length in meters (keypoint centroid when baseless)."""
    if motion.has_base:
        path = motion.base_pos
    else:
        path = motion.keypoints.mean(axis=1)
    return float(np.linalg.norm(np.diff(path, axis=0), axis=1).sum())


def dtw_normalized_pct(a: Motion, b: Motion) -> float:
    """DTW keypoint error as a percentage of the reference path length."""
    length = max(trajectory_length(a), 1e-9)
    return dtw_keypoint_l1(a, b) / MM / length * 100.0


def contact_segments(contacts: np.ndarray, foot: int, fps: float, min_segment_s: float):
    """(start, end) frame pairs of contact runs lasting >= min_segment_s."""
    col = np.asarray(contacts, dtype=bool)[:, foot]
    runs = []
    i = 0
    n = col.shape[0]
    while i < n:
        if col[i]:
            k = i
            while k + 1 < n and col[k + 1]:
                k += 1
            if (k - i) / fps >= min_segment_s:
                runs.append((i, k))
            i = k + 1
        else:
            i += 1
    return runs


def foot_slide(motion: Motion, contacts: np.ndarray | None = None,
               min_segment_s: float = 0.5) -> np.ndarray:
    """Mean per-foot slide over qualifying contact segments, in mm.

    Slide is the horizontal (xy) L1 distance between a segment's first
    and last foot position; vertical settling at contact boundaries does
    not count as sliding.  Feet without any qualifying segment report
    NaN (absent), not zero.
    """
    if contacts is None:
        contacts = motion.contacts
    if contacts is None:
        raise ValueError("no contact schedule available")
    feet = motion.feet
    out = np.full(4, np.nan)
    for j in range(4):
        runs = contact_segments(contacts, j, motion.fps, min_segment_s)
        if runs:
            slides = [np.abs(feet[b, j, :2] - feet[a, j, :2]).sum() for a, b in runs]
            out[j] = float(np.mean(slides)) * MM
    return out


def _resample_schedule(sched: np.ndarray, length: int) -> np.ndarray:
    src = np.asarray(sched, dtype=bool)
    if src.shape[0] == length:
        return src
    idx = np.round(np.linspace(0, src.shape[0] - 1, length)).astype(int)
    return src[idx]


def contact_iou(a_contacts: np.ndarray, b_contacts: np.ndarray) -> float:
    """Intersection-over-union of two contact schedules.

    Schedules of different lengths are aligned by nearest-frame
    resampling of the shorter one.  Two all-false schedules count as
    identical (IoU 1).
    """
    a = np.asarray(a_contacts, dtype=bool)
    b = np.asarray(b_contacts, dtype=bool)
    if a.shape[1] != b.shape[1]:
        raise ValueError("foot counts differ")
    n = max(a.shape[0], b.shape[0])
    a = _resample_schedule(a, n)
    b = _resample_schedule(b, n)
    union = np.sum(a | b)
    if union == 0:
        return 1.0
    return float(np.sum(a & b)) / float(union)


def travel_distance(motion: Motion, axis=None) -> float:
    """Net base displacement in meters, along ``axis`` or in the plane."""
    if not motion.has_base:
        raise ValueError("motion has no base trajectory")
    disp = motion.base_pos[-1] - motion.base_pos[0]
    if axis is None:
        return float(np.hypot(disp[0], disp[1]))
    return float(abs(disp[_axis_index(axis)]))


def _axis_index(axis) -> int:
    if isinstance(axis, str):
        try:
            return {"x": 0, "y": 1, "z": 2, "longitudinal": 0, "lateral": 1}[axis.lower()]
        except KeyError:
            raise ValueError(f"unknown axis '{axis}'") from None
    return int(axis)


def recovery_rate(original: Motion, reconstructed: Motion, axis="x") -> float:
    """Reconstructed travel distance as a percentage of the original's.

    ``axis`` picks the direction the motion travels: longitudinal (x)
    for forward gaits, lateral (y) for side-stepping.
    """
    ref = travel_distance(original, axis)
    if ref < 1e-3:
        raise ValueError(f"original travel distance {ref:.2g} m is below 1 mm")
    return 100.0 * travel_distance(reconstructed, axis) / ref
