"""Track-bundle (annotation output) and prediction-file formats.

Track bundle::

    manifest.yaml
    tracks/<object_id>/<camera_id>/tracks_2d.f32le      N * F * 2
                                   tracks_3d.f32le      N * F * 3
                                   occlusion.u8         N * F, 1 = occluded
                                   fov.u8               N * F, 1 = in view
                                   source_frames.i64le  N, 0-based

Prediction files use the same array layout with ``tracks_2d`` and an
optional ``occlusion`` channel, listed in a ``track-predictions`` manifest.
"""

from __future__ import annotations

import os
import shutil
from pathlib import Path

import numpy as np
import yaml

from .binio import F32, I64, U8, BundleFileError, CorruptFileError, MissingFileError, read_raw, write_raw

TRACK_FORMAT = "track-bundle"
PRED_FORMAT = "track-predictions"
FORMAT_VERSION = 1

ARRAYS = {
    "tracks_2d": ("tracks_2d.f32le", F32, 2),
    "tracks_3d": ("tracks_3d.f32le", F32, 3),
    "occlusion": ("occlusion.u8", U8, 1),
    "fov": ("fov.u8", U8, 1),
    "source_frames": ("source_frames.i64le", I64, 0),
}
_SUFFIX = {F32: "f32le", U8: "u8", I64: "i64le"}


class TrackBundleError(ValueError):
    pass


class ArrayError(TrackBundleError):
    def __init__(self, object_id, camera_id, array, detail):
        self.object_id, self.camera_id, self.array = object_id, camera_id, array
        super().__init__(f"{object_id}/{camera_id}: array {array}: {detail}")


def entry_dir(object_id, camera_id) -> str:
    return f"tracks/{object_id}/{camera_id}"


def _expected_count(name, n, f):
    _, _, width = ARRAYS[name]
    return n if width == 0 else n * f * width


def dump_manifest(path, manifest) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(yaml.safe_dump(manifest, sort_keys=False, allow_unicode=True), encoding="utf-8")
    os.replace(tmp, path)


def load_manifest(path, expected_format) -> dict:
    path = Path(path)
    mpath = path / "manifest.yaml" if path.is_dir() else path
    if not mpath.is_file():
        raise MissingFileError(mpath)
    manifest = yaml.safe_load(mpath.read_text(encoding="utf-8"))
    if not isinstance(manifest, dict) or manifest.get("format") != expected_format:
        raise TrackBundleError(f"{mpath} is not a {expected_format} manifest")
    if "version" not in manifest:
        raise TrackBundleError(f"{mpath}: format version missing")
    return manifest


def write_entry_arrays(staging: Path, arrays: dict) -> dict:
    """Write arrays to ``staging``; returns {name: file name}."""
    files = {}
    for name, arr in arrays.items():
        fname, dtype, _ = ARRAYS[name]
        write_raw(staging / fname, np.asarray(arr).reshape(-1), dtype)
        files[name] = fname
    return files


def commit_dir(staging: Path, final: Path) -> None:
    """Move a fully written staging directory into place."""
    final.parent.mkdir(parents=True, exist_ok=True)
    if final.exists():
        shutil.rmtree(final)
    os.replace(staging, final)


def read_entry_arrays(root, entry, names=None) -> dict:
    """Load an entry's arrays with their manifest-declared shapes."""
    root = Path(root)
    n, f = int(entry["n_tracks"]), int(entry["n_frames"])
    out = {}
    for name, rel in entry["files"].items():
        if names is not None and name not in names:
            continue
        _, dtype, width = ARRAYS[name]
        count = _expected_count(name, n, f)
        try:
            raw = read_raw(root / entry["dir"] / rel, dtype, count=count)
        except (MissingFileError, CorruptFileError) as exc:
            raise ArrayError(entry["object_id"], entry["camera_id"], name, exc) from exc
        if width == 0:
            out[name] = raw
        elif width == 1:
            out[name] = raw.reshape(n, f)
        else:
            out[name] = raw.reshape(n, f, width)
    return out


def read_track_bundle(path) -> dict:
    return load_manifest(path, TRACK_FORMAT)


def write_predictions(root, entries, resolution, ground_truth=None) -> Path:
    """Write prediction entries.

    Each entry has ``object_id``, ``camera_id``, ``tracks_2d`` (N, F, 2), an
    optional ``occlusion`` (N, F) and optional ``extra`` {name: (array, dtype)}.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    listed = []
    for e in entries:
        xy = np.asarray(e["tracks_2d"])
        n, f = xy.shape[:2]
        d = entry_dir(e["object_id"], e["camera_id"])
        files = {"tracks_2d": "tracks_2d.f32le"}
        write_raw(root / d / "tracks_2d.f32le", xy.reshape(-1), F32)
        if e.get("occlusion") is not None:
            files["occlusion"] = "occlusion.u8"
            write_raw(root / d / "occlusion.u8", np.asarray(e["occlusion"]).reshape(-1), U8)
        for name, (arr, dtype) in (e.get("extra") or {}).items():
            fname = f"{name}.{_SUFFIX[np.dtype(dtype)]}"
            write_raw(root / d / fname, np.asarray(arr).reshape(-1), dtype)
            files[name] = fname
        listed.append({"object_id": e["object_id"], "camera_id": e["camera_id"],
                       "n_tracks": int(n), "n_frames": int(f), "dir": d, "files": files})
    manifest = {
        "format": PRED_FORMAT,
        "version": FORMAT_VERSION,
        "ground_truth": None if ground_truth is None else str(ground_truth),
        "resolution": [int(resolution[0]), int(resolution[1])],
        "entries": listed,
    }
    dump_manifest(root / "manifest.yaml", manifest)
    return root


def read_prediction_entry(root, entry) -> dict:
    """tracks_2d and, when present, occlusion for one prediction entry."""
    root = Path(root)
    n, f = int(entry["n_tracks"]), int(entry["n_frames"])
    out = {}
    base = root / entry["dir"]
    try:
        out["tracks_2d"] = read_raw(base / entry["files"]["tracks_2d"], F32, count=n * f * 2).reshape(n, f, 2)
        if "occlusion" in entry["files"]:
            out["occlusion"] = read_raw(base / entry["files"]["occlusion"], U8, count=n * f).reshape(n, f)
    except BundleFileError as exc:
        raise ArrayError(entry["object_id"], entry["camera_id"], "predictions", exc) from exc
    return out
