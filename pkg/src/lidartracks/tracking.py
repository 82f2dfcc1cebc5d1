"""Rigid propagation of object point clouds across time and image projection.

A point observed at frame ``t`` in the ego frame is carried to frame ``tau``
by going to the world frame, into the box frame at ``t``, out of the box
frame at ``tau`` and back into the ego frame at ``tau``::

    x_tau = W_tau^-1  B_tau  B_t^-1  W_t  x_t
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._validation import check_points
from .scene import BoxTrack, CameraCalibration
from .transforms import invert_matrix


class PropagationError(ValueError):
    pass


class EmptyObjectError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrackSet3D:
    object_id: str
    frame_start: int  # absolute frame index of column 0
    tracks: np.ndarray  # (N, F, 3) ego frame per target frame
    source_frames: np.ndarray  # (N,) absolute source frame per track

    @property
    def n_tracks(self) -> int:
        return self.tracks.shape[0]

    @property
    def n_frames(self) -> int:
        return self.tracks.shape[1]

    @property
    def frame_indices(self) -> np.ndarray:
        return np.arange(self.frame_start, self.frame_start + self.n_frames)

    def column(self, t) -> int:
        return int(t) - self.frame_start


@dataclass(frozen=True, eq=False)
class TrackSet2D:
    object_id: str
    camera_id: str
    frame_start: int
    pixels: np.ndarray  # (N, F, 2), may be out of bounds
    ranges: np.ndarray  # (N, F) camera-centre distance
    in_fov: np.ndarray  # (N, F) bool
    source_frames: np.ndarray
    depth: np.ndarray | None = None  # (N, F) forward coordinate in the camera frame

    @property
    def n_tracks(self) -> int:
        return self.pixels.shape[0]

    @property
    def n_frames(self) -> int:
        return self.pixels.shape[1]

    @property
    def frame_indices(self) -> np.ndarray:
        return np.arange(self.frame_start, self.frame_start + self.n_frames)


def _pose(ego_poses, t) -> np.ndarray:
    return np.asarray(ego_poses[t - 1], dtype=np.float64)


def _box_pose(box_track: BoxTrack, t) -> np.ndarray:
    if t not in box_track:
        raise PropagationError(f"object {box_track.object_id}: no box pose at frame {t}")
    return box_track.pose_at(t)


def transfer_matrix(t, tau, ego_poses, box_track: BoxTrack) -> np.ndarray:
    """The 4x4 matrix carrying ego-frame points at ``t`` to the ego frame at ``tau``."""
    b_t = _box_pose(box_track, t)
    b_tau = _box_pose(box_track, tau)
    if t == tau:
        return np.eye(4)
    return invert_matrix(_pose(ego_poses, tau)) @ b_tau @ invert_matrix(b_t) @ _pose(ego_poses, t)


def propagate(points, t, tau, ego_poses, box_track: BoxTrack) -> np.ndarray:
    """Move ego-frame points observed at frame ``t`` to where they are at ``tau``."""
    points = check_points(points)
    m = transfer_matrix(t, tau, ego_poses, box_track)
    if t == tau:
        return points.copy()
    return points @ m[:3, :3].T + m[:3, 3]


def _source_block(points, t, frames, ego_poses, box_track, col0) -> np.ndarray:
    src = invert_matrix(box_track.pose_at(t)) @ _pose(ego_poses, t)
    ego = np.stack([_pose(ego_poses, tau) for tau in frames])
    boxes = np.stack([box_track.pose_at(tau) for tau in frames])
    mats = invert_matrix(ego) @ boxes @ src
    out = np.einsum("fij,nj->nfi", mats[:, :3, :3], points) + mats[None, :, :3, 3]
    out[:, t - col0] = points
    return out


def build_tracks(object_clouds, ego_poses, box_track: BoxTrack, frame_window=None,
                 stride: int = 1, n_jobs: int = 1) -> TrackSet3D:
    """Stack the propagations of every source frame's points into one track set.

    ``object_clouds`` maps absolute frame index to an (N_t, 3) ego-frame
    cloud. Rows are ordered by ascending source frame, then by point order.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    start, end = frame_window if frame_window is not None else box_track.span
    frames = list(range(start, end + 1))
    missing = [tau for tau in frames if tau not in box_track]
    if missing:
        raise PropagationError(f"object {box_track.object_id}: no box pose at frame {missing[0]}")

    sources = []
    for t in frames[::stride]:
        pts = object_clouds.get(t) if hasattr(object_clouds, "get") else object_clouds[t - 1]
        if pts is None:
            continue
        pts = check_points(pts)
        if len(pts):
            sources.append((t, pts))
    if not sources:
        raise EmptyObjectError(f"object {box_track.object_id}: no points in any source frame")

    counts = np.array([len(p) for _, p in sources])
    offsets = np.concatenate([[0], np.cumsum(counts)])
    tracks = np.empty((offsets[-1], len(frames), 3))
    source_frames = np.repeat([t for t, _ in sources], counts).astype(np.int64)

    def job(k):
        t, pts = sources[k]
        tracks[offsets[k]:offsets[k + 1]] = _source_block(pts, t, frames, ego_poses, box_track, start)

    if n_jobs > 1 and len(sources) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(job, range(len(sources))))
    else:
        for k in range(len(sources)):
            job(k)
    if not np.all(np.isfinite(tracks)):
        raise PropagationError(f"object {box_track.object_id}: propagation produced non-finite positions")
    return TrackSet3D(box_track.object_id, start, tracks, source_frames)


def project_points(points_ego, calib: CameraCalibration):
    """Project ego-frame points; returns (pixels, ranges, forward, in_fov).

    Points at or behind the camera plane keep whatever the raw formula
    gives for their pixel but are never in the field of view.
    """
    pts = np.asarray(points_ego, dtype=np.float64)
    m = calib.ego_to_camera
    cam = pts @ m[:3, :3].T + m[:3, 3]
    kc = cam @ calib.K.T
    with np.errstate(divide="ignore", invalid="ignore"):
        pixels = kc[..., :2] / kc[..., 2:3]
    forward = cam[..., 2]
    ranges = np.linalg.norm(cam, axis=-1)
    in_fov = (
        (forward > 0)
        & (pixels[..., 0] >= 0) & (pixels[..., 0] < calib.width)
        & (pixels[..., 1] >= 0) & (pixels[..., 1] < calib.height)
    )
    return pixels, ranges, forward, in_fov


def project_to_image(tracks: TrackSet3D, calib: CameraCalibration) -> TrackSet2D:
    pixels, ranges, forward, in_fov = project_points(tracks.tracks, calib)
    return TrackSet2D(
        object_id=tracks.object_id,
        camera_id=calib.camera_id,
        frame_start=tracks.frame_start,
        pixels=pixels,
        ranges=ranges,
        in_fov=in_fov,
        source_frames=tracks.source_frames,
        depth=forward,
    )


def unproject(pixels, ranges, calib: CameraCalibration) -> np.ndarray:
    """Inverse of :func:`project_points` for points in front of the camera."""
    pixels = np.asarray(pixels, dtype=np.float64)
    ones = np.ones(pixels.shape[:-1] + (1,))
    rays = np.concatenate([pixels, ones], axis=-1) @ np.linalg.inv(calib.K).T
    rays /= np.linalg.norm(rays, axis=-1, keepdims=True)
    cam = rays * np.asarray(ranges, dtype=np.float64)[..., None]
    m = calib.extrinsic.matrix
    return cam @ m[:3, :3].T + m[:3, 3]
