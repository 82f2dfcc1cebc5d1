"""Scene data model and the scene-bundle directory format.

Frame indices are 1-based in memory (``t`` in ``[1, F]``) and 0-based on
disk. Arrays are float64 in memory; sweeps are stored as float32.

Bundle layout::

    manifest.yaml
    ego_poses.f64le              F * 16 reals, row-major 4x4 per frame
    sweeps/frame_%05d.xyz.f32le  N_t * 3 reals per frame (ego frame)
    boxes/<object_id>.f64le      184-byte records per annotated frame
    calib/<camera_id>            9 K reals, 16 extrinsic reals, width, height
    depth/<camera>/frame_%05d.f32le   optional external dense depth
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ._validation import check_points
from .binio import F32, F64, I64, CorruptFileError, MissingFileError, read_raw, write_raw
from .transforms import RigidTransform, _check_matrix, apply_matrix, invert_matrix

CAMERA_IDS = ("front", "front_left", "front_right", "side_left", "side_right")
FORMAT_NAME = "scene-bundle"
FORMAT_VERSION = 1

BOX_RECORD = np.dtype([
    ("frame", I64),
    ("pose", F64, (16,)),
    ("dims", F64, (3,)),
    ("velocity", F64, (3,)),
])
CALIB_BYTES = 25 * 8 + 2 * 8

_SAFE_ID = re.compile(r"^[A-Za-z0-9_.\-]+$")


class SceneError(ValueError):
    """Base class for scene ingestion failures."""


class IngestionError(SceneError):
    pass


class AlignmentError(SceneError):
    def __init__(self, modality, expected, actual):
        self.modality = modality
        super().__init__(f"{modality}: expected {expected} frames, found {actual}")


class CorruptionError(SceneError):
    def __init__(self, path, expected, actual):
        self.path = str(path)
        self.expected = expected
        self.actual = actual
        super().__init__(f"corrupt file {path}: expected {expected} bytes, got {actual}")


@dataclass(frozen=True, eq=False)
class CameraCalibration:
    camera_id: str
    K: np.ndarray
    extrinsic: RigidTransform  # camera frame -> ego frame
    width: int
    height: int

    def __post_init__(self):
        if self.camera_id not in CAMERA_IDS:
            raise ValueError(f"unknown camera id {self.camera_id!r}")
        K = np.array(self.K, dtype=np.float64)
        if K.shape != (3, 3):
            raise ValueError("K must be 3x3")
        if np.any(np.tril(K, -1) != 0) or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("K must be upper-triangular with positive focal lengths")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError("image size must be positive")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def ego_to_camera(self) -> np.ndarray:
        return invert_matrix(self.extrinsic.matrix)

    def to_camera(self, points_ego) -> np.ndarray:
        return apply_matrix(self.ego_to_camera, points_ego)


@dataclass(frozen=True, eq=False)
class BoxTrack:
    """World-frame box poses for one object, one entry per annotated frame."""

    object_id: str
    frames: np.ndarray  # (K,) 1-based, strictly increasing
    poses: np.ndarray  # (K, 4, 4) box -> world
    dims: np.ndarray  # (K, 3) length, width, height
    velocities: np.ndarray | None = None  # (K, 3) m/s, NaN rows where unannotated
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        poses = np.asarray(self.poses, dtype=np.float64).reshape(-1, 4, 4)
        dims = np.asarray(self.dims, dtype=np.float64).reshape(-1, 3)
        n = len(frames)
        if len(poses) != n or len(dims) != n:
            raise ValueError(f"box track {self.object_id}: inconsistent entry counts")
        if n > 1 and np.any(np.diff(frames) <= 0):
            raise ValueError(f"box track {self.object_id}: frame indices not strictly increasing")
        if np.any(dims <= 0):
            raise ValueError(f"box track {self.object_id}: dims must be positive")
        for m in poses:
            _check_matrix(m)
        vel = None
        if self.velocities is not None:
            vel = np.asarray(self.velocities, dtype=np.float64).reshape(-1, 3)
            if len(vel) != n:
                raise ValueError(f"box track {self.object_id}: velocity count mismatch")
        for arr in (frames, poses, dims) + ((vel,) if vel is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "_index", {int(t): i for i, t in enumerate(frames)})

    def __len__(self):
        return len(self.frames)

    def __contains__(self, t):
        return int(t) in self._index

    def index_of(self, t) -> int:
        try:
            return self._index[int(t)]
        except KeyError:
            raise KeyError(f"object {self.object_id} has no box at frame {t}") from None

    def pose_at(self, t) -> np.ndarray:
        return self.poses[self.index_of(t)]

    def dims_at(self, t) -> np.ndarray:
        return self.dims[self.index_of(t)]

    @property
    def span(self) -> tuple[int, int]:
        return int(self.frames[0]), int(self.frames[-1])

    @property
    def has_velocity(self) -> bool:
        return self.velocities is not None and bool(np.all(np.isfinite(self.velocities)))


@dataclass(frozen=True, eq=False)
class FrameInfo:
    t: int
    timestamp: float
    image: str


@dataclass(frozen=True, eq=False)
class SceneBundle:
    """One scene joined across modalities; immutable once built."""

    frames: tuple
    calibrations: dict
    ego_poses: np.ndarray  # (F, 4, 4) ego -> world
    sweeps: tuple  # F arrays of shape (N_t, 3), ego frame
    box_tracks: dict
    frame_rate: float = 10.0
    name: str = "scene"
    root: Path | None = None
    external_depth: dict = field(default_factory=dict)

    def __post_init__(self):
        F = len(self.frames)
        ego = np.asarray(self.ego_poses, dtype=np.float64)
        if ego.shape != (F, 4, 4):
            raise AlignmentError("ego_poses", F, ego.shape[0] if ego.ndim == 3 else ego.shape)
        if len(self.sweeps) != F:
            raise AlignmentError("sweeps", F, len(self.sweeps))
        for i, fr in enumerate(self.frames):
            if fr.t != i + 1:
                raise AlignmentError("frames", F, f"frame index {fr.t} at position {i + 1}")
        for m in ego:
            _check_matrix(m)
        sweeps = []
        for s in self.sweeps:
            arr = check_points(s, name="sweep")
            arr.setflags(write=False)
            sweeps.append(arr)
        for obj_id, track in self.box_tracks.items():
            if len(track) and (track.frames[0] < 1 or track.frames[-1] > F):
                raise AlignmentError(f"boxes/{obj_id}", F, f"frame {track.frames[-1]} outside [1, {F}]")
        for cam, files in self.external_depth.items():
            if len(files) != F:
                raise AlignmentError(f"depth/{cam}", F, len(files))
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        ego.setflags(write=False)
        object.__setattr__(self, "ego_poses", ego)
        object.__setattr__(self, "sweeps", tuple(sweeps))

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def ego_pose(self, t) -> np.ndarray:
        return self.ego_poses[t - 1]

    def sweep(self, t) -> np.ndarray:
        return self.sweeps[t - 1]

    def object_points(self, object_id, t) -> np.ndarray:
        """Points of sweep ``t`` inside the object's box at ``t`` (ego frame)."""
        track = self.box_tracks[object_id]
        return points_in_box(self.sweep(t), track.pose_at(t), track.dims_at(t), self.ego_pose(t))


def box_mask(points, box_pose, dims, ego_pose) -> np.ndarray:
    """Boolean mask of ego-frame points lying inside a world-frame box (closed)."""
    points = check_points(points)
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    ego_to_box = invert_matrix(_as_matrix(box_pose)) @ _as_matrix(ego_pose)
    local = apply_matrix(ego_to_box, points)
    half = 0.5 * np.asarray(dims, dtype=np.float64)
    return np.all(np.abs(local) <= half, axis=1)


def points_in_box(points, box_pose, dims, ego_pose) -> np.ndarray:
    points = check_points(points)
    return points[box_mask(points, box_pose, dims, ego_pose)]


def _as_matrix(pose):
    return pose.matrix if isinstance(pose, RigidTransform) else np.asarray(pose, dtype=np.float64)


# -- on-disk format ---------------------------------------------------------

def sweep_filename(i0: int) -> str:
    return f"sweeps/frame_{i0:05d}.xyz.f32le"


def depth_filename(camera: str, i0: int) -> str:
    return f"depth/{camera}/frame_{i0:05d}.f32le"


def _read(root: Path, rel, dtype, **kw):
    try:
        return read_raw(root / rel, dtype, **kw)
    except MissingFileError as exc:
        raise IngestionError(f"missing file: {rel}") from exc
    except CorruptFileError as exc:
        raise CorruptionError(rel, exc.expected, exc.actual) from exc


def read_calibration(path, camera_id) -> CameraCalibration:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing file: {path}")
    raw = path.read_bytes()
    if len(raw) != CALIB_BYTES:
        raise CorruptionError(path, CALIB_BYTES, len(raw))
    reals = np.frombuffer(raw[:200], dtype=F64)
    size = np.frombuffer(raw[200:], dtype=I64)
    return CameraCalibration(
        camera_id=camera_id,
        K=reals[:9].reshape(3, 3),
        extrinsic=RigidTransform(reals[9:25].reshape(4, 4)),
        width=int(size[0]),
        height=int(size[1]),
    )


def write_calibration(path, calib: CameraCalibration) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    reals = np.concatenate([calib.K.ravel(), calib.extrinsic.matrix.ravel()]).astype(F64)
    size = np.array([calib.width, calib.height], dtype=I64)
    path.write_bytes(reals.tobytes() + size.tobytes())


def read_box_track(path, object_id) -> BoxTrack:
    path = Path(path)
    rec = read_raw(path, np.uint8, multiple_of=BOX_RECORD.itemsize).view(BOX_RECORD)
    vel = rec["velocity"]
    return BoxTrack(
        object_id=object_id,
        frames=rec["frame"] + 1,
        poses=rec["pose"].reshape(-1, 4, 4),
        dims=rec["dims"],
        velocities=None if np.all(np.isnan(vel)) else vel,
    )


def write_box_track(path, track: BoxTrack) -> None:
    rec = np.zeros(len(track), dtype=BOX_RECORD)
    rec["frame"] = track.frames - 1
    rec["pose"] = track.poses.reshape(-1, 16)
    rec["dims"] = track.dims
    rec["velocity"] = np.nan if track.velocities is None else track.velocities
    write_raw(path, rec.view(np.uint8), np.uint8)


def load_scene_bundle(path) -> SceneBundle:
    """Read a scene-bundle directory and join every modality by frame index."""
    root = Path(path)
    manifest_path = root / "manifest.yaml"
    if not manifest_path.is_file():
        raise IngestionError(f"missing file: {manifest_path}")
    try:
        manifest = yaml.safe_load(manifest_path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise IngestionError(f"unreadable manifest {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT_NAME:
        raise IngestionError(f"{manifest_path} is not a {FORMAT_NAME} manifest")

    F = int(manifest["frame_count"])
    frame_entries = manifest.get("frames", [])
    if len(frame_entries) != F:
        raise AlignmentError("frames", F, len(frame_entries))
    frames = tuple(
        FrameInfo(t=int(e["index"]) + 1, timestamp=float(e["timestamp"]), image=str(e.get("image", "")))
        for e in sorted(frame_entries, key=lambda e: int(e["index"]))
    )

    ego_raw = _read(root, manifest.get("ego_poses", "ego_poses.f64le"), F64, multiple_of=16)
    if len(ego_raw) != 16 * F:
        raise AlignmentError("ego_poses", F, len(ego_raw) // 16)
    ego = ego_raw.reshape(F, 4, 4)

    sweep_files = manifest.get("sweeps", [sweep_filename(i) for i in range(F)])
    if len(sweep_files) != F:
        raise AlignmentError("sweeps", F, len(sweep_files))
    sweeps = []
    for rel in sweep_files:
        pts = _read(root, rel, F32, multiple_of=3).astype(np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise IngestionError(f"non-finite coordinates in {rel}")
        sweeps.append(pts)

    calibs = {}
    for cam, rel in (manifest.get("calibration") or {}).items():
        calibs[cam] = read_calibration(root / rel, cam)

    tracks = {}
    for obj_id, meta in (manifest.get("objects") or {}).items():
        obj_id = str(obj_id)
        rel = meta.get("file", f"boxes/{obj_id}.f64le")
        p = root / rel
        if not p.is_file():
            raise IngestionError(f"missing file: {rel}")
        try:
            tracks[obj_id] = read_box_track(p, obj_id)
        except CorruptFileError as exc:
            raise CorruptionError(rel, exc.expected, exc.actual) from exc

    external = {}
    for cam, files in (manifest.get("external_depth") or {}).items():
        if len(files) != F:
            raise AlignmentError(f"depth/{cam}", F, len(files))
        external[cam] = tuple(root / f for f in files)

    return SceneBundle(
        frames=frames,
        calibrations=calibs,
        ego_poses=ego,
        sweeps=tuple(sweeps),
        box_tracks=tracks,
        frame_rate=float(manifest.get("frame_rate", 10.0)),
        name=str(manifest.get("name", root.name)),
        root=root,
        external_depth=external,
    )


def write_scene_bundle(bundle: SceneBundle, path, extra: dict | None = None) -> Path:
    """Write ``bundle`` in the directory format read by :func:`load_scene_bundle`."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    F = bundle.n_frames
    for obj_id in bundle.box_tracks:
        if not _SAFE_ID.match(obj_id):
            raise ValueError(f"object id {obj_id!r} is not filesystem-safe")

    write_raw(root / "ego_poses.f64le", bundle.ego_poses.reshape(-1), F64)
    sweep_files = [sweep_filename(i) for i in range(F)]
    for rel, pts in zip(sweep_files, bundle.sweeps):
        write_raw(root / rel, pts.reshape(-1), F32)
    calib_files = {}
    for cam, calib in bundle.calibrations.items():
        calib_files[cam] = f"calib/{cam}"
        write_calibration(root / calib_files[cam], calib)
    objects = {}
    for obj_id, track in bundle.box_tracks.items():
        objects[obj_id] = {"file": f"boxes/{obj_id}.f64le"}
        write_box_track(root / objects[obj_id]["file"], track)

    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "name": bundle.name,
        "frame_count": F,
        "frame_rate": float(bundle.frame_rate),
        "cameras": list(bundle.calibrations),
        "frames": [
            {"index": fr.t - 1, "timestamp": float(fr.timestamp), "image": fr.image}
            for fr in bundle.frames
        ],
        "ego_poses": "ego_poses.f64le",
        "sweeps": sweep_files,
        "calibration": calib_files,
        "objects": objects,
    }
    if bundle.external_depth:
        manifest["external_depth"] = {
            cam: [Path(f).relative_to(root).as_posix() if Path(f).is_absolute() else str(f) for f in files]
            for cam, files in bundle.external_depth.items()
        }
    if extra:
        manifest.update(extra)
    (root / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=False), encoding="utf-8")
    return root
