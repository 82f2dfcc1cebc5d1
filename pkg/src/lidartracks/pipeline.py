"""End-to-end orchestration: annotate, validate, evaluate, split and render.

A scene is processed in three phases. Object jobs build 3D tracks, project
them into each camera and apply the eligibility filters. Frame jobs then
build depth maps for every camera that has an eligible object. Finally,
object-camera jobs label occlusion and write their arrays to a staging
directory that is moved into place once complete. Results are always
collected by key, never by completion order, so the output bytes do not
depend on the worker count.
"""

from __future__ import annotations

import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import depth as depth_mod
from .metrics import (
    DEFAULT_QUERY_COUNT,
    DEFAULT_RESOLUTION,
    THRESHOLDS,
    EvalInput,
    EvaluationError,
    evaluate_tracks,
    histogram_values,
    sample_query_points,
)
from .occlusion import DEFAULT_TOLERANCE, occlusion_map
from .quality import (
    DEFAULT_MAX_MIN_DISTANCE,
    DEFAULT_MIN_FRAMES,
    consistent_tracks,
    eligibility,
    speed_error_stats,
)
from .scene import CameraCalibration, SceneBundle, load_scene_bundle, points_in_box
from .trackbundle import (
    FORMAT_VERSION,
    PRED_FORMAT,
    TRACK_FORMAT,
    ArrayError,
    commit_dir,
    dump_manifest,
    entry_dir,
    load_manifest,
    read_entry_arrays,
    read_prediction_entry,
    write_entry_arrays,
)
from .tracking import build_tracks, project_points, project_to_image
from .transforms import RigidTransform

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    input: str = ""
    output: str = ""
    cameras: list | None = None  # None = every camera in the scene
    depth: str = depth_mod.NEAREST_NEIGHBOR  # or "external" / "external:<dir>"
    tolerance: float = DEFAULT_TOLERANCE
    min_frames: int = DEFAULT_MIN_FRAMES
    max_min_distance: float = DEFAULT_MAX_MIN_DISTANCE
    stride: int = 1
    workers: int = 1
    seed: int = 0
    max_speed_error: float | None = None
    objects: list | None = None

    def __post_init__(self):
        if int(self.workers) < 1:
            raise ValueError("workers must be >= 1")
        if int(self.stride) < 1:
            raise ValueError("stride must be >= 1")
        for name in ("min_frames", "max_min_distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.tolerance >= 0:
            raise ValueError("tolerance must be non-negative")
        method, _ = self.depth_method
        if method not in (depth_mod.NEAREST_NEIGHBOR, depth_mod.EXTERNAL):
            raise ValueError(f"unknown depth completion {self.depth!r}")

    @property
    def depth_method(self):
        method, _, root = str(self.depth).partition(":")
        return method, (root or None)

    def echo(self) -> dict:
        """Config as recorded in the output manifest.

        ``workers`` and ``output`` cannot change the result and are left out
        so that outputs stay byte-identical across them.
        """
        d = asdict(self)
        d.pop("workers")
        d.pop("output")
        return d

    @classmethod
    def from_file(cls, path, **overrides) -> RunConfig:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


def _calib_dict(calib: CameraCalibration) -> dict:
    return {
        "K": calib.K.tolist(),
        "extrinsic": calib.extrinsic.matrix.tolist(),
        "width": calib.width,
        "height": calib.height,
    }


def _calib_from_dict(camera_id, d) -> CameraCalibration:
    return CameraCalibration(camera_id, np.array(d["K"]), RigidTransform(np.array(d["extrinsic"])),
                             d["width"], d["height"])


def _pool_map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


@dataclass
class _ObjectResult:
    object_id: str
    tracks3d: object = None
    per_camera: dict = field(default_factory=dict)  # camera -> (tracks2d, report)
    speed: object = None
    error: str | None = None


def _process_object(scene: SceneBundle, object_id, cameras, cfg: RunConfig) -> _ObjectResult:
    res = _ObjectResult(object_id)
    try:
        track = scene.box_tracks[object_id]
        start, end = track.span
        clouds = {
            t: points_in_box(scene.sweep(t), track.pose_at(t), track.dims_at(t), scene.ego_pose(t))
            for t in range(start, end + 1) if t in track
        }
        res.tracks3d = build_tracks(clouds, scene.ego_poses, track, (start, end), stride=cfg.stride)
        if track.velocities is not None and res.tracks3d.n_frames >= 2:
            res.speed = speed_error_stats(res.tracks3d, scene.ego_poses, track, scene.frame_rate)
        for cam in cameras:
            calib = scene.calibrations[cam]
            t2 = project_to_image(res.tracks3d, calib)
            report = eligibility(track, t2, cam, ego_poses=scene.ego_poses, calib=calib,
                                 min_frames=cfg.min_frames, max_min_distance=cfg.max_min_distance)
            res.per_camera[cam] = (t2, report)
    except Exception as exc:  # one bad object must not abort the scene
        log.warning("object %s failed: %s", object_id, exc)
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def annotate_scene(scene: SceneBundle, config: RunConfig) -> list[dict]:
    """Annotate every (object, camera) pair in memory.

    Returns one entry per pair in (object id, camera) order. Eligible entries
    carry an ``arrays`` dict; the rest list their ``reasons``.
    """
    cameras = list(config.cameras) if config.cameras else list(scene.calibrations)
    missing = [c for c in cameras if c not in scene.calibrations]
    if missing:
        raise ValueError(f"cameras not in scene: {missing}")
    object_ids = sorted(config.objects if config.objects else scene.box_tracks)
    unknown = [o for o in object_ids if o not in scene.box_tracks]
    if unknown:
        raise ValueError(f"objects not in scene: {unknown}")
    workers = int(config.workers)

    results = _pool_map(lambda oid: _process_object(scene, oid, cameras, config), object_ids, workers)

    needed = sorted(
        {cam for r in results if r.error is None for cam, (_, rep) in r.per_camera.items() if rep.eligible},
        key=cameras.index,
    )
    method, ext_root = config.depth_method
    depth_maps = {
        cam: depth_mod.build_depth_maps(scene, scene.calibrations[cam], method, ext_root, n_jobs=workers)
        for cam in needed
    }

    def label(job):
        r, cam = job
        entry = {"object_id": r.object_id, "camera_id": cam}
        if r.error is not None:
            entry.update(eligible=False, reasons=["error"], error=r.error)
            return entry
        t2, rep = r.per_camera[cam]
        entry.update(eligible=rep.eligible, reasons=list(rep.reasons),
                     eligibility={k: _plain(v) for k, v in rep.to_dict().items()
                                  if k not in ("object_id", "camera_id", "eligible", "reasons")},
                     speed_stats=None if r.speed is None else _plain(r.speed.to_dict()))
        if not rep.eligible:
            return entry
        try:
            occ = occlusion_map(t2, depth_maps[cam], config.tolerance)
            keep = np.ones(t2.n_tracks, dtype=bool)
            if r.speed is not None:
                keep = consistent_tracks(r.speed, config.max_speed_error)
            entry.update(
                n_tracks=int(keep.sum()), n_frames=int(t2.n_frames), frame_start=int(t2.frame_start) - 1,
                n_rejected=int((~keep).sum()), calibration=_calib_dict(scene.calibrations[cam]),
                arrays={
                    "tracks_2d": t2.pixels[keep],
                    "tracks_3d": r.tracks3d.tracks[keep],
                    "occlusion": occ.flags[keep],
                    "fov": occ.fov[keep],
                    "source_frames": r.tracks3d.source_frames[keep] - 1,
                },
            )
        except Exception as exc:
            log.warning("object %s camera %s failed: %s", r.object_id, cam, exc)
            entry.update(eligible=False, reasons=["error"], error=f"{type(exc).__name__}: {exc}")
        return entry

    return _pool_map(label, [(r, cam) for r in results for cam in cameras], workers)


def write_track_bundle(scene: SceneBundle, entries, out, config: RunConfig) -> dict:
    """Write annotated entries; each entry's arrays are staged, then moved into place."""
    out = Path(out)
    if out.exists():
        if (out / "manifest.yaml").exists() or not any(out.iterdir()):
            shutil.rmtree(out)
        else:
            raise ValueError(f"refusing to overwrite non-bundle directory {out}")
    staging = out / ".staging"
    staging.mkdir(parents=True)
    listed = []
    for entry in entries:
        entry = dict(entry)
        arrays = entry.pop("arrays", None)
        if arrays is not None:
            d = entry_dir(entry["object_id"], entry["camera_id"])
            files = write_entry_arrays(staging / d, arrays)
            commit_dir(staging / d, out / d)
            entry["dir"], entry["files"] = d, files
        listed.append(entry)
    shutil.rmtree(staging, ignore_errors=True)
    manifest = {
        "format": TRACK_FORMAT,
        "version": FORMAT_VERSION,
        "scene": {"name": scene.name, "path": str(Path(config.input).resolve()), "frame_count": scene.n_frames,
                  "frame_rate": float(scene.frame_rate)},
        "config": _plain(config.echo()),
        "entries": listed,
    }
    dump_manifest(out / "manifest.yaml", manifest)
    return manifest


def annotate(config: RunConfig) -> dict:
    """Run the full annotation pipeline and write a track bundle; returns its manifest."""
    if not config.output:
        raise ValueError("an output directory is required")
    scene = load_scene_bundle(config.input)
    return write_track_bundle(scene, annotate_scene(scene, config), config.output, config)


def _plain(value):
    """Recursively convert numpy scalars/arrays so YAML output is stable."""
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    return value


# -- validate ---------------------------------------------------------------------

@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, entry, what):
        self.violations.append(f"{entry['object_id']}/{entry['camera_id']}: {what}")


def validate(bundle_path, scene_path=None, pixel_tol=1e-2, speed_tol=1e-3) -> ValidationReport:
    """Re-check array sizes, channel invariants, projection, identity at source and speed stats."""
    root = Path(bundle_path)
    manifest = load_manifest(root, TRACK_FORMAT)
    report = ValidationReport()
    scene = None
    scene_path = scene_path or manifest.get("scene", {}).get("path")
    if scene_path and Path(scene_path).exists():
        scene = load_scene_bundle(scene_path)

    for entry in manifest.get("entries", []):
        if not entry.get("eligible"):
            continue
        report.checked += 1
        try:
            arrays = read_entry_arrays(root, entry)
        except ArrayError as exc:
            report.add(entry, f"array {exc.array} unreadable ({exc})")
            continue
        xy, xyz = arrays["tracks_2d"].astype(np.float64), arrays["tracks_3d"].astype(np.float64)
        occ, fov, src = arrays["occlusion"], arrays["fov"], arrays["source_frames"]
        f0, n_frames = int(entry["frame_start"]), int(entry["n_frames"])

        if not np.all(np.isfinite(xyz)):
            report.add(entry, "tracks_3d contains non-finite values")
        if np.any(occ > 1) or np.any(fov > 1):
            report.add(entry, "occlusion/fov bytes must be 0 or 1")
        if np.any((fov == 0) & (occ == 0)):
            report.add(entry, "out-of-view points must be marked occluded")
        if len(src) and (np.any(np.diff(src) < 0) or src.min() < f0 or src.max() >= f0 + n_frames):
            report.add(entry, "source_frames out of order or outside the frame window")
            continue

        calib = _calib_from_dict(entry["camera_id"], entry["calibration"])
        pix, _, _, in_view = project_points(xyz, calib)
        if np.any(in_view != fov.astype(bool)):
            report.add(entry, "fov channel disagrees with the 3D tracks")
        err = np.linalg.norm(pix - xy, axis=-1)[in_view]
        if err.size and err.max() > pixel_tol:
            report.add(entry, f"tracks_2d deviates from projected tracks_3d by {err.max():.3g} px")

        rows = np.arange(len(src))
        src_cols = src - f0
        src_xy_err = np.linalg.norm(pix[rows, src_cols] - xy[rows, src_cols], axis=-1)
        src_xy_err = src_xy_err[in_view[rows, src_cols]]
        if src_xy_err.size and src_xy_err.max() > pixel_tol:
            report.add(entry, "identity at source broken in tracks_2d")

        if scene is not None:
            obj = entry["object_id"]
            track = scene.box_tracks.get(obj)
            if track is None:
                report.add(entry, "object missing from scene")
                continue
            if entry.get("n_rejected", 0) == 0:
                for t0 in np.unique(src):
                    t = int(t0) + 1
                    pts = points_in_box(scene.sweep(t), track.pose_at(t), track.dims_at(t), scene.ego_pose(t))
                    got = arrays["tracks_3d"][src == t0, t0 - f0]
                    if got.shape != pts.shape or not np.array_equal(got, pts.astype(np.float32)):
                        report.add(entry, f"identity at source broken at frame {t}")
                        break
                stats = entry.get("speed_stats")
                if stats and track.velocities is not None:
                    from .tracking import TrackSet3D

                    ts = TrackSet3D(obj, f0 + 1, xyz, src + 1)
                    again = speed_error_stats(ts, scene.ego_poses, track, scene.frame_rate)
                    for k, v in again.percentiles().items():
                        if abs(v - stats[k]) > speed_tol:
                            report.add(entry, f"speed-error {k} {v:.6g} differs from recorded {stats[k]:.6g}")
    return report


# -- evaluate ----------------------------------------------------------------------

def evaluate(pred_path, gt_path, resolution=DEFAULT_RESOLUTION, thresholds=THRESHOLDS,
             query_count=DEFAULT_QUERY_COUNT, seed=0, all_points=False, bins=10.0) -> dict:
    """Score a prediction file against a track bundle; one report per video plus an aggregate."""
    preds = load_manifest(pred_path, PRED_FORMAT)
    gt = load_manifest(gt_path, TRACK_FORMAT)
    gt_entries = {(e["object_id"], e["camera_id"]): e for e in gt["entries"] if e.get("eligible")}
    pred_res = tuple(preds.get("resolution") or ())
    videos, all_errors = [], []
    for k, entry in enumerate(preds["entries"]):
        key = (entry["object_id"], entry["camera_id"])
        if key not in gt_entries:
            raise EvaluationError(f"no ground truth for {key[0]}/{key[1]}")
        g = gt_entries[key]
        if (int(entry["n_tracks"]), int(entry["n_frames"])) != (int(g["n_tracks"]), int(g["n_frames"])):
            raise EvaluationError(
                f"{key[0]}/{key[1]}: prediction shape {entry['n_tracks']}x{entry['n_frames']} "
                f"vs ground truth {g['n_tracks']}x{g['n_frames']}")
        p = read_prediction_entry(pred_path, entry)
        ga = read_entry_arrays(gt_path, g, names=("tracks_2d", "occlusion"))
        native = (int(g["calibration"]["width"]), int(g["calibration"]["height"]))
        pred_xy = p["tracks_2d"].astype(np.float64)
        if pred_res and pred_res != native:
            pred_xy = pred_xy * (np.array(native, float) / np.array(pred_res, float))
        gt_occ = ga["occlusion"].astype(bool)
        inp = EvalInput(pred_xy, ga["tracks_2d"].astype(np.float64), gt_occ,
                        None if "occlusion" not in p else p["occlusion"].astype(bool),
                        resolution=native)
        if not all_points:
            queries = sample_query_points(gt_occ, None, query_count, seed=[seed, k])
            if not queries:
                continue
            inp = inp.subset([i for i, _ in queries])
            inp.query_points = [(j, f) for j, (_, f) in enumerate(queries)]
        rep = evaluate_tracks(inp, thresholds, resolution)
        all_errors.append(rep.per_point_mean_error)
        videos.append({"object_id": key[0], "camera_id": key[1], **rep.to_dict()})

    def mean_of(name):
        vals = [v[name] for v in videos if v[name] is not None]
        return float(np.mean(vals)) if vals else None

    errors = np.concatenate(all_errors) if all_errors else np.zeros(0)
    errors = errors[np.isfinite(errors)]
    hist = None
    if errors.size:
        counts, edges = histogram_values(errors, bins)
        hist = {"edges": edges.tolist(), "counts": counts.tolist(),
                "p90": float(np.percentile(errors, 90))}
    return {
        "resolution": "native" if resolution is None else list(resolution),
        "thresholds": list(thresholds),
        "videos": videos,
        "aggregate": {
            "delta_avg": mean_of("delta_avg"),
            "occlusion_accuracy": mean_of("occlusion_accuracy"),
            "average_jaccard": mean_of("average_jaccard"),
            "n_videos": len(videos),
        },
        "histogram": hist,
    }


def format_table(report: dict) -> str:
    def pct(v):
        return "--" if v is None else f"{100 * v:6.2f}"

    lines = [f"{'video':<32} {'AJ':>7} {'<d_avg':>7} {'OA':>7}"]
    for v in report["videos"]:
        name = f"{v['object_id']}/{v['camera_id']}"
        lines.append(f"{name:<32} {pct(v['average_jaccard']):>7} {pct(v['delta_avg']):>7} "
                     f"{pct(v['occlusion_accuracy']):>7}")
    a = report["aggregate"]
    lines.append(f"{'mean':<32} {pct(a['average_jaccard']):>7} {pct(a['delta_avg']):>7} "
                 f"{pct(a['occlusion_accuracy']):>7}")
    return "\n".join(lines)


# -- split -------------------------------------------------------------------------

SPLIT_NAMES = ("train", "val", "test")


def split_counts(n, fractions) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier split."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be non-negative and sum to 1")
    exact = n * fractions
    counts = np.floor(exact + 1e-9).astype(int)
    remainder = exact - counts
    order = sorted(range(len(fractions)), key=lambda i: (-round(remainder[i], 9), i))
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def split(scene_ids, fractions=(0.8, 0.1, 0.1), seed=0, names=SPLIT_NAMES) -> dict:
    """Seeded assignment of scene ids to splits."""
    ids = sorted(set(map(str, scene_ids)))
    counts = split_counts(len(ids), fractions)
    order = np.random.default_rng(seed).permutation(len(ids))
    out, pos = {}, 0
    for name, c in zip(names, counts):
        out[name] = sorted(ids[i] for i in order[pos:pos + c])
        pos += c
    return out


# -- render --------------------------------------------------------------------------

class RenderError(ValueError):
    pass


VISIBLE_COLOR = (0, 220, 0)
OCCLUDED_COLOR = (255, 0, 255)


def render(bundle_path, out_dir, scene_path=None, frames=None, sample_count=50, seed=0,
           object_id=None, camera_id=None, radius=2) -> list[dict]:
    """Draw sampled tracks over the scene's frames: dots when visible, crosses when occluded.

    Only points projecting inside the image are drawn. Returns one
    ``{"frame", "path", "visible", "occluded"}`` record per image.
    """
    from PIL import Image, ImageDraw

    root = Path(bundle_path)
    manifest = load_manifest(root, TRACK_FORMAT)
    entries = [e for e in manifest["entries"] if e.get("eligible")
               and (object_id is None or e["object_id"] == object_id)
               and (camera_id is None or e["camera_id"] == camera_id)]
    if not entries:
        raise RenderError("no eligible entry matches the selection")
    entry = entries[0]
    scene_root = Path(scene_path or manifest["scene"]["path"])
    scene_manifest = yaml.safe_load((scene_root / "manifest.yaml").read_text(encoding="utf-8"))
    images = {int(f["index"]): f.get("image", "") for f in scene_manifest["frames"]}

    arrays = read_entry_arrays(root, entry, names=("tracks_2d", "occlusion", "fov"))
    n, f0 = int(entry["n_tracks"]), int(entry["frame_start"])
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(n, size=min(sample_count, n), replace=False))
    xy, occ, fov = arrays["tracks_2d"][rows], arrays["occlusion"][rows], arrays["fov"][rows]

    first, last = frames if frames is not None else (f0 + 1, f0 + int(entry["n_frames"]))
    sources = {}
    for t in range(first, last + 1):
        if not 0 <= t - 1 - f0 < int(entry["n_frames"]):
            raise RenderError(f"frame {t} outside the annotated window")
        rel = images.get(t - 1, "").format(camera=entry["camera_id"])
        if not rel or not (scene_root / rel).is_file():
            raise RenderError(f"missing frame image for frame {t}: {scene_root / rel}")
        sources[t] = scene_root / rel
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for t, src in sources.items():
        col = t - 1 - f0
        img = Image.open(src).convert("RGB")
        draw = ImageDraw.Draw(img)
        vis_n = occ_n = 0
        for (x, y), o, v in zip(xy[:, col], occ[:, col], fov[:, col]):
            if not v:
                continue
            if o:
                draw.line([(x - radius, y - radius), (x + radius, y + radius)], fill=OCCLUDED_COLOR)
                draw.line([(x - radius, y + radius), (x + radius, y - radius)], fill=OCCLUDED_COLOR)
                occ_n += 1
            else:
                draw.ellipse([x - radius, y - radius, x + radius, y + radius], fill=VISIBLE_COLOR)
                vis_n += 1
        path = out / f"{entry['object_id']}_{entry['camera_id']}_frame_{t - 1:05d}.png"
        img.save(path)
        records.append({"frame": t, "path": str(path), "visible": vis_n, "occluded": occ_n})
    return records
