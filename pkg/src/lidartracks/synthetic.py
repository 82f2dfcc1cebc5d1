"""Synthetic scenes with analytically known tracks and visibility.

Everything here is deliberately self-contained: poses come from closed-form
curves, rotations are built with Rodrigues' formula and inverted by
transposition in place, and visibility is decided by exact ray casting
against the scene's boxes, cylinders and planar walls. None of it goes
through :mod:`lidartracks.transforms` or :mod:`lidartracks.tracking`, so
agreement between the two routes is evidence rather than tautology.

Scenario files are YAML::

    seed: 3
    frames: 48
    frame_rate: 10
    cameras:
      - {id: front, width: 160, height: 120, fx: 80, fy: 80, cx: 80, cy: 60,
         position: [1.5, 0, 1.5], yaw_deg: 0}
    ego: {position: [0, 0, 0], velocity: [2, 0, 0], yaw_deg: 0, yaw_rate_deg: 0}
    objects:
      - {id: car, shape: box, dims: [4, 2, 1.6], density: 400,
         position: [14, 0, 1.2], velocity: [0, 0, 0], yaw_deg: 0, yaw_rate_deg: 10}
    occluders:
      - {id: wall, center: [8, 3, 1.5], width: 3, height: 3, yaw_deg: 0,
         velocity: [0, -1, 0], density: 900}

Units: meters, seconds, degrees. ``velocity`` is per second; ``yaw_rate_deg``
is per frame. A wall's ``yaw_deg`` is the heading of its normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .binio import F32, I64, U8
from .scene import CAMERA_IDS, BoxTrack, CameraCalibration, FrameInfo, SceneBundle, write_scene_bundle
from .transforms import RigidTransform

SHAPES = ("box", "cylinder")
BACKGROUND = -1
ORACLE_FORMAT = "track-predictions"

# camera x right, y down, z forward, expressed in a forward-looking ego frame
_CAMERA_BASE = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


class ScenarioError(ValueError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        where = f"{source or 'scenario'}:{line}: " if line is not None else ""
        super().__init__(where + message)


class GenerationError(ValueError):
    pass


# -- closed-form kinematics -------------------------------------------------

def axis_rotation(axis, angle) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``angle`` radians."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if not n > 1e-12:
        raise GenerationError("rotation axis has zero length")
    x, y, z = a / n
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
    ])


@dataclass
class Motion:
    """Pose curve: constant linear velocity plus constant rotation rate."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))  # m/s
    yaw_deg: float = 0.0
    yaw_rate_deg: float = 0.0  # per frame
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def rotation(self, t, frame_rate=None) -> np.ndarray:
        return axis_rotation(self.axis, np.deg2rad(self.yaw_deg + self.yaw_rate_deg * (t - 1)))

    def translation(self, t, frame_rate) -> np.ndarray:
        return np.asarray(self.position, float) + np.asarray(self.velocity, float) * (t - 1) / frame_rate

    def matrix(self, t, frame_rate) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation(t)
        m[:3, 3] = self.translation(t, frame_rate)
        return m


@dataclass
class CameraSpec:
    camera_id: str = "front"
    width: int = 160
    height: int = 120
    fx: float = 80.0
    fy: float = 80.0
    cx: float = 80.0
    cy: float = 60.0
    position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.5]))
    yaw_deg: float = 0.0

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def rotation(self) -> np.ndarray:
        """Camera axes in the ego frame (camera -> ego)."""
        return axis_rotation([0, 0, 1], np.deg2rad(self.yaw_deg)) @ _CAMERA_BASE

    def calibration(self) -> CameraCalibration:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.position
        return CameraCalibration(self.camera_id, self.K, RigidTransform(m), self.width, self.height)


@dataclass
class ObjectSpec:
    object_id: str
    shape: str = "box"
    dims: np.ndarray = field(default_factory=lambda: np.array([4.0, 2.0, 1.6]))
    motion: Motion = field(default_factory=Motion)
    density: float = 400.0  # points per m^2
    margin: float = 0.1  # added to each box dimension in the annotation

    @property
    def half(self) -> np.ndarray:
        return 0.5 * np.asarray(self.dims, float)


@dataclass
class OccluderSpec:
    occluder_id: str
    center: np.ndarray
    width: float
    height: float
    yaw_deg: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    density: float = 900.0

    def frame(self, t, frame_rate):
        """Centre, in-plane horizontal axis, vertical axis and normal at frame ``t``."""
        c = np.asarray(self.center, float) + np.asarray(self.velocity, float) * (t - 1) / frame_rate
        yaw = np.deg2rad(self.yaw_deg)
        normal = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        u = np.array([-np.sin(yaw), np.cos(yaw), 0.0])
        return c, u, np.array([0.0, 0.0, 1.0]), normal


@dataclass
class SyntheticScenario:
    seed: int = 0
    n_frames: int = 48
    frame_rate: float = 10.0
    cameras: list = field(default_factory=lambda: [CameraSpec()])
    ego: Motion = field(default_factory=Motion)
    objects: list = field(default_factory=list)
    occluders: list = field(default_factory=list)
    noise_sigma: float = 0.0
    lidar_origin: np.ndarray | None = None  # ego frame; defaults to the first camera centre
    name: str = "synthetic"

    def camera(self, camera_id=None) -> CameraSpec:
        if camera_id is None:
            return self.cameras[0]
        for cam in self.cameras:
            if cam.camera_id == camera_id:
                return cam
        raise KeyError(camera_id)

    def object(self, object_id) -> ObjectSpec:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(object_id)

    @property
    def lidar_position(self) -> np.ndarray:
        if self.lidar_origin is not None:
            return np.asarray(self.lidar_origin, float)
        return np.asarray(self.cameras[0].position, float)

    def check(self):
        if self.n_frames < 1:
            raise GenerationError("scenario needs at least one frame")
        if not self.frame_rate > 0:
            raise GenerationError("frame_rate must be positive")
        ids = [o.object_id for o in self.objects] + [w.occluder_id for w in self.occluders]
        if len(set(ids)) != len(ids):
            raise GenerationError("object and occluder ids must be unique")
        for obj in self.objects:
            if obj.shape not in SHAPES:
                raise GenerationError(f"{obj.object_id}: unknown shape {obj.shape!r}")
            if np.any(np.asarray(obj.dims) <= 0) or not obj.density > 0:
                raise GenerationError(f"{obj.object_id}: dims and density must be positive")
        for wall in self.occluders:
            if not (wall.width > 0 and wall.height > 0 and wall.density > 0):
                raise GenerationError(f"{wall.occluder_id}: size and density must be positive")
        for motion in [self.ego] + [o.motion for o in self.objects]:
            for t in (1, self.n_frames):
                r = motion.rotation(t)
                if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1) > 1e-9:
                    raise GenerationError("pose curve does not produce a rigid rotation")
        return self


# -- scenario files -----------------------------------------------------------

class _LineLoader(yaml.SafeLoader):
    pass


class _Mapping(dict):
    lines: dict
    line: int


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _Mapping()
    out.lines = {}
    out.line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


class _Reader:
    def __init__(self, source):
        self.source = source

    def fail(self, message, mapping=None, key=None):
        line = None
        if isinstance(mapping, _Mapping):
            line = mapping.lines.get(key, mapping.line)
        raise ScenarioError(message, line, self.source)

    def get(self, mapping, key, default=None, kind=float, required=False):
        if not isinstance(mapping, dict):
            self.fail(f"expected a mapping, got {type(mapping).__name__}")
        if key not in mapping:
            if required:
                self.fail(f"missing required key {key!r}", mapping)
            return default
        value = mapping[key]
        try:
            if kind == "vec3":
                arr = np.asarray(value, dtype=np.float64)
                if arr.shape != (3,):
                    raise ValueError
                return arr
            return kind(value)
        except (TypeError, ValueError):
            self.fail(f"invalid value for {key!r}: {value!r}", mapping, key)

    def motion(self, m):
        return Motion(
            position=self.get(m, "position", np.zeros(3), "vec3"),
            velocity=self.get(m, "velocity", np.zeros(3), "vec3"),
            yaw_deg=self.get(m, "yaw_deg", 0.0),
            yaw_rate_deg=self.get(m, "yaw_rate_deg", 0.0),
            axis=self.get(m, "axis", np.array([0.0, 0.0, 1.0]), "vec3"),
        )


def scenario_from_dict(data, source=None) -> SyntheticScenario:
    r = _Reader(source)
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping", 1, source)
    cameras = []
    for c in data.get("cameras") or [{}]:
        cam_id = r.get(c, "id", "front", str)
        if cam_id not in CAMERA_IDS:
            r.fail(f"unknown camera id {cam_id!r}", c, "id")
        width, height = r.get(c, "width", 160, int), r.get(c, "height", 120, int)
        cameras.append(CameraSpec(
            camera_id=cam_id, width=width, height=height,
            fx=r.get(c, "fx", 80.0), fy=r.get(c, "fy", r.get(c, "fx", 80.0)),
            cx=r.get(c, "cx", width / 2), cy=r.get(c, "cy", height / 2),
            position=r.get(c, "position", np.array([0.0, 0.0, 1.5]), "vec3"),
            yaw_deg=r.get(c, "yaw_deg", 0.0),
        ))
    objects = []
    for o in data.get("objects") or []:
        shape = r.get(o, "shape", "box", str)
        if shape not in SHAPES:
            r.fail(f"unknown shape {shape!r}", o, "shape")
        dims = r.get(o, "dims", required=True, kind="vec3")
        if np.any(dims <= 0):
            r.fail("dims must be positive", o, "dims")
        density = r.get(o, "density", 400.0)
        if not density > 0:
            r.fail("density must be positive", o, "density")
        motion = r.motion(o)
        if not np.linalg.norm(motion.axis) > 1e-12:
            r.fail("rotation axis has zero length", o, "axis")
        objects.append(ObjectSpec(
            object_id=r.get(o, "id", required=True, kind=str), shape=shape, dims=dims,
            motion=motion, density=density, margin=r.get(o, "margin", 0.1),
        ))
    occluders = []
    for w in data.get("occluders") or []:
        width, height = r.get(w, "width", required=True), r.get(w, "height", required=True)
        if not (width > 0 and height > 0):
            r.fail("wall size must be positive", w)
        occluders.append(OccluderSpec(
            occluder_id=r.get(w, "id", required=True, kind=str),
            center=r.get(w, "center", required=True, kind="vec3"),
            width=width, height=height, yaw_deg=r.get(w, "yaw_deg", 0.0),
            velocity=r.get(w, "velocity", np.zeros(3), "vec3"),
            density=r.get(w, "density", 900.0),
        ))
    ego = r.motion(data.get("ego") or _Mapping())
    n_frames = r.get(data, "frames", 48, int)
    frame_rate = r.get(data, "frame_rate", 10.0)
    if n_frames < 1:
        r.fail("frames must be >= 1", data, "frames")
    if not frame_rate > 0:
        r.fail("frame_rate must be positive", data, "frame_rate")
    lidar = data.get("lidar_origin")
    return SyntheticScenario(
        seed=r.get(data, "seed", 0, int),
        n_frames=n_frames,
        frame_rate=frame_rate,
        cameras=cameras,
        ego=ego,
        objects=objects,
        occluders=occluders,
        noise_sigma=r.get(data, "noise_sigma", 0.0),
        lidar_origin=None if lidar is None else r.get(data, "lidar_origin", kind="vec3"),
        name=r.get(data, "name", "synthetic", str),
    )


def load_scenario(path) -> SyntheticScenario:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ScenarioError(f"YAML syntax error: {exc.problem}", line, str(path)) from exc
    return scenario_from_dict(data, source=str(path))


# -- geometry -----------------------------------------------------------------

def _jittered_grid(rng, size_u, size_v, spacing):
    nu = max(1, int(np.ceil(size_u / spacing)))
    nv = max(1, int(np.ceil(size_v / spacing)))
    iu, iv = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    ju, jv = rng.random((2, nu, nv))
    u = (iu + ju).ravel() * (size_u / nu) - size_u / 2
    v = (iv + jv).ravel() * (size_v / nv) - size_v / 2
    return u, v


def sample_object_surface(obj: ObjectSpec, rng) -> np.ndarray:
    """Jittered-grid samples on the object's surface, in its local frame."""
    spacing = 1.0 / np.sqrt(obj.density)
    hx, hy, hz = obj.half
    parts = []
    if obj.shape == "box":
        for axis, (a, b) in enumerate(((1, 2), (0, 2), (0, 1))):
            for sign in (-1.0, 1.0):
                u, v = _jittered_grid(rng, 2 * obj.half[a], 2 * obj.half[b], spacing)
                pts = np.zeros((len(u), 3))
                pts[:, axis] = sign * obj.half[axis]
                pts[:, a], pts[:, b] = u, v
                parts.append(pts)
    else:
        radius = min(hx, hy)
        u, v = _jittered_grid(rng, 2 * np.pi * radius, 2 * hz, spacing)
        theta = u / radius
        parts.append(np.column_stack([radius * np.cos(theta), radius * np.sin(theta), v]))
        for sign in (-1.0, 1.0):
            u, v = _jittered_grid(rng, 2 * radius, 2 * radius, spacing)
            keep = u * u + v * v <= radius * radius
            parts.append(np.column_stack([u[keep], v[keep], np.full(keep.sum(), sign * hz)]))
    return np.concatenate(parts)


def sample_wall(wall: OccluderSpec, rng, t, frame_rate) -> np.ndarray:
    c, u_axis, v_axis, _ = wall.frame(t, frame_rate)
    u, v = _jittered_grid(rng, wall.width, wall.height, 1.0 / np.sqrt(wall.density))
    return c + u[:, None] * u_axis + v[:, None] * v_axis


def _ray_box(o, d, rot, centre, half):
    lo = (o - centre) @ rot
    ld = d @ rot
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - lo) / ld
        t2 = (half - lo) / ld
    parallel = ld == 0
    inside = np.abs(lo) <= half
    t1 = np.where(parallel, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(parallel, np.where(inside, np.inf, np.inf), t2)
    tmin = np.max(np.minimum(t1, t2), axis=-1)
    tmax = np.min(np.maximum(t1, t2), axis=-1)
    hit = (tmax >= tmin) & (tmin >= 0)
    return np.where(hit, tmin, np.inf)


def _ray_cylinder(o, d, rot, centre, radius, hz):
    lo = (o - centre) @ rot
    ld = d @ rot
    best = np.full(ld.shape[:-1], np.inf)
    a = ld[..., 0] ** 2 + ld[..., 1] ** 2
    b = 2 * (lo[..., 0] * ld[..., 0] + lo[..., 1] * ld[..., 1])
    c = lo[..., 0] ** 2 + lo[..., 1] ** 2 - radius ** 2
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        root = (-b - np.sqrt(np.maximum(disc, 0))) / (2 * a)
        z = lo[..., 2] + root * ld[..., 2]
        ok = (disc >= 0) & (a > 0) & (root >= 0) & (np.abs(z) <= hz)
        best = np.where(ok, root, best)
        for sign in (-1.0, 1.0):
            tc = (sign * hz - lo[..., 2]) / ld[..., 2]
            x = lo[..., 0] + tc * ld[..., 0]
            y = lo[..., 1] + tc * ld[..., 1]
            ok = (tc >= 0) & (x * x + y * y <= radius * radius) & np.isfinite(tc)
            best = np.where(ok & (tc < best), tc, best)
    return best


def _ray_wall(o, d, centre, u, v, n, width, height):
    denom = d @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        tw = ((centre - o) @ n) / denom
    q = o + tw[..., None] * d - centre
    ok = (tw >= 0) & (np.abs(q @ u) <= width / 2) & (np.abs(q @ v) <= height / 2) & (denom != 0)
    return np.where(ok, tw, np.inf)


def first_hit(scenario: SyntheticScenario, t, origin, dirs):
    """Distance to, and id of, the first surface along each ray (world frame).

    ``dirs`` need not be normalised; distances are in units of ``|dir|``.
    Ids index objects first, then occluders; misses give ``BACKGROUND``.
    """
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    best = np.full(d.shape[:-1], np.inf)
    ident = np.full(d.shape[:-1], BACKGROUND, dtype=np.int64)
    k = 0
    for obj in scenario.objects:
        rot = obj.motion.rotation(t)
        centre = obj.motion.translation(t, scenario.frame_rate)
        if obj.shape == "box":
            dist = _ray_box(o, d, rot, centre, obj.half)
        else:
            dist = _ray_cylinder(o, d, rot, centre, min(obj.half[0], obj.half[1]), obj.half[2])
        closer = dist < best
        best = np.where(closer, dist, best)
        ident = np.where(closer, k, ident)
        k += 1
    for wall in scenario.occluders:
        c, u, v, n = wall.frame(t, scenario.frame_rate)
        dist = _ray_wall(o, d, c, u, v, n, wall.width, wall.height)
        closer = dist < best
        best = np.where(closer, dist, best)
        ident = np.where(closer, k, ident)
        k += 1
    return best, ident


def _visible_from(scenario, t, origin, points, rel_eps=1e-7):
    dirs = points - origin
    dist, _ = first_hit(scenario, t, origin, dirs)
    # distances are in units of |dir|: the point itself sits at 1
    return dist >= 1.0 - rel_eps


# -- ego / camera helpers -------------------------------------------------------

def ego_to_world(scenario, t, points):
    r = scenario.ego.rotation(t)
    return np.asarray(points) @ r.T + scenario.ego.translation(t, scenario.frame_rate)


def world_to_ego(scenario, t, points):
    r = scenario.ego.rotation(t)
    return (np.asarray(points) - scenario.ego.translation(t, scenario.frame_rate)) @ r


def camera_centre_world(scenario, t, cam: CameraSpec):
    return ego_to_world(scenario, t, cam.position)


# -- generation -------------------------------------------------------------------

@dataclass
class Oracle:
    """Analytic ground truth for a generated scene."""

    scenario: SyntheticScenario
    object_rows: list  # per frame: {object_id: slice into the sweep}

    def source_points(self, bundle: SceneBundle, object_id, t) -> np.ndarray:
        return bundle.sweep(t)[self.object_rows[t - 1][object_id]]

    def object_tracks(self, bundle: SceneBundle, object_id, camera_id=None, stride=1,
                      frames=None):
        """Oracle tracks for every sweep point of the object, stacked like the pipeline."""
        frames = list(range(1, self.scenario.n_frames + 1)) if frames is None else list(frames)
        blocks, sources = [], []
        for t in frames[::stride]:
            pts = self.source_points(bundle, object_id, t)
            if len(pts):
                blocks.append(analytic_positions(self.scenario, object_id, pts, t, frames))
                sources.append(np.full(len(pts), t, dtype=np.int64))
        tracks = np.concatenate(blocks) if blocks else np.zeros((0, len(frames), 3))
        result = visibility(self.scenario, tracks, frames, camera_id)
        result.tracks = tracks
        result.source_frames = np.concatenate(sources) if sources else np.zeros(0, np.int64)
        return result


@dataclass
class OracleTracks:
    tracks: np.ndarray | None  # (N, F, 3) ego frame
    pixels: np.ndarray  # (N, F, 2)
    ranges: np.ndarray  # (N, F)
    in_fov: np.ndarray  # (N, F)
    occluded: np.ndarray  # (N, F), out-of-view folded in
    band: np.ndarray  # (N, F) near a depth discontinuity
    source_frames: np.ndarray | None = None


def analytic_positions(scenario, object_id, source_points, t, frames=None) -> np.ndarray:
    """Closed-form ego-frame positions at every frame of points observed at ``t``."""
    obj = scenario.object(object_id)
    frames = range(1, scenario.n_frames + 1) if frames is None else frames
    fr = scenario.frame_rate
    world = ego_to_world(scenario, t, np.asarray(source_points, dtype=np.float64))
    local = (world - obj.motion.translation(t, fr)) @ obj.motion.rotation(t)
    out = np.empty((len(local), len(frames), 3))
    for j, tau in enumerate(frames):
        w = local @ obj.motion.rotation(tau).T + obj.motion.translation(tau, fr)
        out[:, j] = world_to_ego(scenario, tau, w)
    return out


def analytic_tracks(scenario, object_id, source_points, source_frame, camera_id=None) -> OracleTracks:
    """Exact tracks and visibility schedule for points observed at ``source_frame``."""
    frames = list(range(1, scenario.n_frames + 1))
    tracks = analytic_positions(scenario, object_id, source_points, source_frame, frames)
    out = visibility(scenario, tracks, frames, camera_id)
    out.tracks = tracks
    out.source_frames = np.full(len(tracks), source_frame, dtype=np.int64)
    return out


def _group_lattice(scenario, t, cam: CameraSpec, step=0.5):
    """First-hit surface id on a sub-pixel lattice covering the image."""
    us = np.arange(0, cam.width + step / 2, step)
    vs = np.arange(0, cam.height + step / 2, step)
    uu, vv = np.meshgrid(us, vs)
    rays_cam = np.stack([(uu - cam.cx) / cam.fx, (vv - cam.cy) / cam.fy, np.ones_like(uu)], axis=-1)
    rot_world = scenario.ego.rotation(t) @ cam.rotation
    dirs = rays_cam @ rot_world.T
    dist, ident = first_hit(scenario, t, camera_centre_world(scenario, t, cam), dirs)
    return ident, dist * np.linalg.norm(rays_cam, axis=-1)


def _jumps(ident, rng, a, b, max_rel):
    other = ident[a] != ident[b]
    with np.errstate(invalid="ignore"):
        jump = np.abs(rng[a] - rng[b]) > max_rel * np.minimum(rng[a], rng[b])
    return other | (jump & (ident[a] != BACKGROUND))


def _boundary_prefix(ident, rng, max_rel):
    edge = np.zeros(ident.shape, dtype=np.int64)
    sl = slice(None)
    dy = _jumps(ident, rng, (slice(1, None), sl), (slice(None, -1), sl), max_rel)
    dx = _jumps(ident, rng, (sl, slice(1, None)), (sl, slice(None, -1)), max_rel)
    edge[1:] |= dy
    edge[:-1] |= dy
    edge[:, 1:] |= dx
    edge[:, :-1] |= dx
    prefix = np.zeros((edge.shape[0] + 1, edge.shape[1] + 1), dtype=np.int64)
    prefix[1:, 1:] = edge.cumsum(0).cumsum(1)
    return prefix


def visibility(scenario, tracks, frames, camera_id=None, band_px=1.0, step=0.5,
               tolerance=0.02, surface_eps=1e-5) -> OracleTracks:
    """Exact ray-test occlusion for ego-frame tracks, plus the discontinuity band.

    A depth discontinuity is a change of first-hit surface, or a range jump
    steeper than ``tolerance`` (relative) per pixel, on a ``step``-pixel
    lattice of analytic rays. A (point, frame) is in the band when a
    discontinuity lies within ``band_px`` of the point or anywhere under the
    2x2 pixel lookup footprint, i.e. inside
    ``[x - band_px, x + 2] x [y - band_px, y + 2]``.

    Tracked points carry float32 rounding from the sweep, which can leave a
    point on a visible face a hair inside its solid. A point therefore
    counts as visible unless a surface is hit more than ``surface_eps``
    (relative to its range) in front of it.
    """
    cam = scenario.camera(camera_id)
    n, f = tracks.shape[:2]
    pixels = np.full((n, f, 2), np.nan)
    ranges = np.zeros((n, f))
    in_fov = np.zeros((n, f), dtype=bool)
    occluded = np.ones((n, f), dtype=bool)
    band = np.zeros((n, f), dtype=bool)
    for j, t in enumerate(frames):
        if n == 0:
            break
        cam_pts = (tracks[:, j] - cam.position) @ cam.rotation
        z = cam_pts[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = cam.fx * cam_pts[:, 0] / z + cam.cx
            py = cam.fy * cam_pts[:, 1] / z + cam.cy
        pixels[:, j, 0], pixels[:, j, 1] = px, py
        ranges[:, j] = np.linalg.norm(cam_pts, axis=1)
        fov = (z > 0) & (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
        in_fov[:, j] = fov
        if not fov.any():
            continue
        world = ego_to_world(scenario, t, tracks[fov, j])
        visible = _visible_from(scenario, t, camera_centre_world(scenario, t, cam), world, surface_eps)
        occluded[fov, j] = ~visible
        prefix = _boundary_prefix(*_group_lattice(scenario, t, cam, step), tolerance * step)
        rows, cols = prefix.shape[0] - 1, prefix.shape[1] - 1
        k0 = np.clip(np.floor((px[fov] - band_px) / step).astype(int), 0, cols - 1)
        k1 = np.clip(np.ceil((np.floor(px[fov]) + 2) / step).astype(int), 0, cols - 1)
        l0 = np.clip(np.floor((py[fov] - band_px) / step).astype(int), 0, rows - 1)
        l1 = np.clip(np.ceil((np.floor(py[fov]) + 2) / step).astype(int), 0, rows - 1)
        hits = prefix[l1 + 1, k1 + 1] - prefix[l0, k1 + 1] - prefix[l1 + 1, k0] + prefix[l0, k0]
        band[fov, j] = hits > 0
    return OracleTracks(None, pixels, ranges, in_fov, occluded, band)


def generate_scene(scenario: SyntheticScenario):
    """Simulate a scene bundle and return it with its :class:`Oracle`.

    Each frame resamples every surface independently, keeps the samples seen
    from the LiDAR origin and stores them in the ego frame at float32
    precision (exactly what a written bundle holds).
    """
    scenario.check()
    F, fr = scenario.n_frames, scenario.frame_rate
    sweeps, rows = [], []
    for t in range(1, F + 1):
        origin = ego_to_world(scenario, t, scenario.lidar_position)
        parts, frame_rows, offset = [], {}, 0
        for k, obj in enumerate(scenario.objects):
            rng = np.random.default_rng([scenario.seed, t, k])
            local = sample_object_surface(obj, rng)
            world = local @ obj.motion.rotation(t).T + obj.motion.translation(t, fr)
            world = world[_visible_from(scenario, t, origin, world)]
            parts.append(world)
            frame_rows[obj.object_id] = slice(offset, offset + len(world))
            offset += len(world)
        for k, wall in enumerate(scenario.occluders, start=len(scenario.objects)):
            rng = np.random.default_rng([scenario.seed, t, k])
            world = sample_wall(wall, rng, t, fr)
            world = world[_visible_from(scenario, t, origin, world)]
            parts.append(world)
            offset += len(world)
        world = np.concatenate(parts) if parts else np.zeros((0, 3))
        ego = world_to_ego(scenario, t, world)
        if scenario.noise_sigma > 0:
            noise_rng = np.random.default_rng([scenario.seed, t, 1 << 20])
            ego = ego + noise_rng.normal(0.0, scenario.noise_sigma, ego.shape)
        sweeps.append(ego.astype(np.float32).astype(np.float64))
        rows.append(frame_rows)

    ego_poses = np.stack([scenario.ego.matrix(t, fr) for t in range(1, F + 1)])
    tracks = {}
    for obj in scenario.objects:
        frames = np.arange(1, F + 1)
        poses = np.stack([obj.motion.matrix(t, fr) for t in frames])
        dims = np.tile(np.asarray(obj.dims, float) + obj.margin, (F, 1))
        vel = np.tile(np.asarray(obj.motion.velocity, float), (F, 1))
        tracks[obj.object_id] = BoxTrack(obj.object_id, frames, poses, dims, vel)

    bundle = SceneBundle(
        frames=tuple(FrameInfo(t, (t - 1) / fr, f"images/{{camera}}/frame_{t - 1:05d}.png")
                     for t in range(1, F + 1)),
        calibrations={c.camera_id: c.calibration() for c in scenario.cameras},
        ego_poses=ego_poses,
        sweeps=tuple(sweeps),
        box_tracks=tracks,
        frame_rate=fr,
        name=scenario.name,
    )
    return bundle, Oracle(scenario, rows)


def write_placeholder_images(bundle: SceneBundle, root, value=96) -> None:
    from PIL import Image

    root = Path(root)
    for cam, calib in bundle.calibrations.items():
        img = Image.new("RGB", (calib.width, calib.height), (value, value, value))
        for fr in bundle.frames:
            path = root / fr.image.format(camera=cam)
            path.parent.mkdir(parents=True, exist_ok=True)
            img.save(path, format="PNG", optimize=False)


def write_oracle(bundle: SceneBundle, oracle: Oracle, root) -> Path:
    """Write oracle tracks in the prediction-file layout (one entry per object and camera)."""
    from .trackbundle import write_predictions

    entries = []
    for obj in oracle.scenario.objects:
        for cam in oracle.scenario.cameras:
            res = oracle.object_tracks(bundle, obj.object_id, cam.camera_id)
            entries.append({
                "object_id": obj.object_id,
                "camera_id": cam.camera_id,
                "tracks_2d": res.pixels,
                "occlusion": res.occluded,
                "extra": {
                    "tracks_3d": (res.tracks, F32),
                    "fov": (res.in_fov, U8),
                    "band": (res.band, U8),
                    "source_frames": (res.source_frames, I64),
                },
            })
    cam0 = oracle.scenario.cameras[0]
    return write_predictions(root, entries, resolution=(cam0.width, cam0.height))


def synthesize(scenario: SyntheticScenario, out_dir, with_oracle=True):
    """Write the scene bundle, placeholder frames and oracle files under ``out_dir``."""
    out_dir = Path(out_dir)
    bundle, oracle = generate_scene(scenario)
    write_scene_bundle(bundle, out_dir, extra={"synthetic": {"seed": scenario.seed}})
    write_placeholder_images(bundle, out_dir)
    if with_oracle:
        write_oracle(bundle, oracle, out_dir / "oracle")
    return bundle, oracle
