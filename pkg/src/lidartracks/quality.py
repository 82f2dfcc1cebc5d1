"""Eligibility filters for annotated objects and speed-consistency statistics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .scene import BoxTrack, CameraCalibration
from .tracking import TrackSet2D, TrackSet3D
from .transforms import apply_matrix, invert_matrix

DEFAULT_MIN_FRAMES = 24
DEFAULT_MAX_MIN_DISTANCE = 20.0
FRONT_CAMERAS = ("front", "front_left", "front_right")
PERCENTILES = (25, 50, 75, 95, 99)

REASON_CAMERA = "camera_not_front_facing"
REASON_FRAMES = "min_frames"
REASON_DISTANCE = "min_distance"
REASON_RETURNS = "leaves_frame_and_returns"


class ValidationError(ValueError):
    pass


@dataclass
class EligibilityReport:
    object_id: str
    camera_id: str
    eligible: bool
    reasons: list = field(default_factory=list)
    longest_in_fov_run: int = 0
    in_fov_frames: int = 0
    min_distance: float = float("inf")

    def to_dict(self):
        return asdict(self)


@dataclass
class SpeedErrorStats:
    object_id: str
    errors: np.ndarray  # per-track |mean speed - mean annotated speed|, m/s
    annotated_speed: float
    p25: float
    p50: float
    p75: float
    p95: float
    p99: float

    def percentiles(self) -> dict:
        return {f"p{q}": getattr(self, f"p{q}") for q in PERCENTILES}

    def to_dict(self):
        return {"annotated_speed": self.annotated_speed, "n_tracks": int(len(self.errors)),
                **self.percentiles()}


def _runs(mask) -> list[tuple[int, int]]:
    """(start, length) of each run of True values."""
    padded = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    return [(int(a), int(b - a)) for a, b in zip(edges[::2], edges[1::2])]


def centroid_distances(box_track: BoxTrack, ego_poses, calib: CameraCalibration, frames) -> np.ndarray:
    """Camera-centre distance to the box centre at each frame."""
    out = np.empty(len(frames))
    for i, t in enumerate(frames):
        world_to_ego = invert_matrix(np.asarray(ego_poses[t - 1]))
        centre = apply_matrix(world_to_ego, box_track.pose_at(t)[:3, 3])
        out[i] = np.linalg.norm(calib.to_camera(centre))
    return out


def eligibility(box_track: BoxTrack, tracks2d: TrackSet2D, camera_id, *, ego_poses, calib,
                min_frames=DEFAULT_MIN_FRAMES, max_min_distance=DEFAULT_MAX_MIN_DISTANCE) -> EligibilityReport:
    """Apply the camera, duration, distance and no-return filters."""
    reasons = []
    if camera_id not in FRONT_CAMERAS:
        reasons.append(REASON_CAMERA)

    visible_frames = tracks2d.in_fov.any(axis=0)
    runs = _runs(visible_frames)
    longest = max((n for _, n in runs), default=0)
    if longest < min_frames:
        reasons.append(REASON_FRAMES)

    dist = centroid_distances(box_track, ego_poses, calib, tracks2d.frame_indices)
    min_dist = float(dist.min()) if len(dist) else float("inf")
    if not min_dist <= max_min_distance:
        reasons.append(REASON_DISTANCE)

    if len(runs) > 1:
        reasons.append(REASON_RETURNS)

    return EligibilityReport(
        object_id=box_track.object_id,
        camera_id=camera_id,
        eligible=not reasons,
        reasons=reasons,
        longest_in_fov_run=longest,
        in_fov_frames=int(visible_frames.sum()),
        min_distance=min_dist,
    )


def track_speeds(tracks3d: TrackSet3D, ego_poses, frame_rate) -> np.ndarray:
    """Mean world-frame speed of every track over consecutive frames."""
    if tracks3d.n_frames < 2:
        raise ValidationError("speed needs at least two frames")
    ego = np.stack([np.asarray(ego_poses[t - 1], dtype=np.float64) for t in tracks3d.frame_indices])
    world = np.einsum("fij,nfj->nfi", ego[:, :3, :3], tracks3d.tracks) + ego[None, :, :3, 3]
    step = np.linalg.norm(np.diff(world, axis=1), axis=-1)
    return step.mean(axis=1) * frame_rate


def speed_error_stats(tracks3d: TrackSet3D, ego_poses, box_track: BoxTrack, frame_rate) -> SpeedErrorStats:
    if box_track.velocities is None:
        raise ValidationError(f"object {box_track.object_id} has no annotated velocities")
    idx = [box_track.index_of(t) for t in tracks3d.frame_indices]
    vel = box_track.velocities[idx]
    if not np.all(np.isfinite(vel)):
        raise ValidationError(f"object {box_track.object_id} has frames without annotated velocity")
    annotated = float(np.linalg.norm(vel, axis=1).mean())
    errors = np.abs(track_speeds(tracks3d, ego_poses, frame_rate) - annotated)
    pct = np.percentile(errors, PERCENTILES, method="linear")
    return SpeedErrorStats(box_track.object_id, errors, annotated, *map(float, pct))


def consistent_tracks(stats: SpeedErrorStats, max_error=None) -> np.ndarray:
    """Mask of tracks to keep; everything is kept when ``max_error`` is None."""
    if max_error is None:
        return np.ones(len(stats.errors), dtype=bool)
    return stats.errors <= max_error
