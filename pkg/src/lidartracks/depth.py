"""Per-frame depth maps: sparse projection, exact nearest-neighbour fill and
max-pooled sub-pixel lookup.

Depth values are ranges (Euclidean distance from the camera centre), never
z-depth, so they compare directly against track ranges. Dense grids are
stored as ``(height, width)`` arrays indexed ``[y, x]``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .binio import F32, CorruptFileError, MissingFileError, read_raw, write_raw
from .scene import CameraCalibration, depth_filename
from .tracking import project_points

NEAREST_NEIGHBOR = "nearest_neighbor"
EXTERNAL = "external"


class CompletionError(ValueError):
    pass


class DepthImportError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SparseDepthMap:
    t: int
    xs: np.ndarray  # (S,) int64, sorted by (y, x)
    ys: np.ndarray
    ranges: np.ndarray
    width: int
    height: int

    def __len__(self):
        return len(self.xs)

    def to_grid(self, fill=np.nan) -> np.ndarray:
        grid = np.full((self.height, self.width), fill, dtype=np.float64)
        grid[self.ys, self.xs] = self.ranges
        return grid


@dataclass(frozen=True, eq=False)
class DenseDepthMap:
    t: int
    values: np.ndarray  # (height, width)
    provenance: str = NEAREST_NEIGHBOR

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def sparse_from_samples(xs, ys, ranges, width, height, t=0) -> SparseDepthMap:
    """Build a sparse map from pixel samples, keeping the nearest range per pixel."""
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    ranges = np.asarray(ranges, dtype=np.float64)
    if np.any((xs < 0) | (xs >= width) | (ys < 0) | (ys >= height)):
        raise ValueError("sample outside image bounds")
    flat = ys * width + xs
    order = np.lexsort((ranges, flat))
    flat, ranges = flat[order], ranges[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    flat, ranges = flat[first], ranges[first]
    return SparseDepthMap(t, flat % width, flat // width, ranges, int(width), int(height))


def project_sweep_to_sparse(points, calib: CameraCalibration, t=0) -> SparseDepthMap:
    pixels, ranges, _, in_fov = project_points(points, calib)
    px = pixels[in_fov]
    return sparse_from_samples(
        np.floor(px[:, 0]).astype(np.int64),
        np.floor(px[:, 1]).astype(np.int64),
        ranges[in_fov],
        calib.width,
        calib.height,
        t,
    )


@numba.njit(cache=True, nogil=True)
def _nn_fill(sample_grid, values):
    # sample_grid: (H, W) bool; values: (H, W) ranges at sample pixels.
    # Exact Euclidean nearest sample with ties resolved to the lowest (y, x);
    # ordering uses the integer key d^2 * H * W + (y * W + x).
    H, W = sample_grid.shape
    S = np.int64(H) * np.int64(W)
    col_row = np.full((H, W), -1, np.int64)
    for x in range(W):
        last = -1
        for y in range(H):
            if sample_grid[y, x]:
                last = y
            col_row[y, x] = last
        nxt = -1
        for y in range(H - 1, -1, -1):
            if sample_grid[y, x]:
                nxt = y
            up = col_row[y, x]
            if nxt >= 0 and (up < 0 or nxt - y < y - up):
                col_row[y, x] = nxt
    out = np.empty((H, W), np.float64)
    v = np.empty(W, np.int64)
    key = np.empty(W, np.int64)
    z_num = np.empty(W + 1, np.int64)
    z_den = np.empty(W + 1, np.int64)
    for y in range(H):
        k = -1
        for q in range(W):
            r = col_row[y, q]
            if r < 0:
                continue
            dy = np.int64(y - r)
            kq = S * (dy * dy + np.int64(q) * q) + r * W + q
            while k >= 0:
                num = kq - key[k]
                den = np.int64(q - v[k])
                # pop v[k] if its left boundary is not left of the new crossing
                if k > 0 and num * z_den[k] <= z_num[k] * den:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            key[k] = kq
            if k > 0:
                z_num[k] = kq - key[k - 1]
                z_den[k] = np.int64(q - v[k - 1])
        last = k
        k = 0
        for x in range(W):
            # crossing z = num / (2 * S * den)
            while k < last and z_num[k + 1] < 2 * S * z_den[k + 1] * x:
                k += 1
            out[y, x] = values[col_row[y, v[k]], v[k]]
    return out


def nn_complete(sparse: SparseDepthMap) -> DenseDepthMap:
    """Give every pixel the range of its nearest sample (pixel-centre distance)."""
    if len(sparse) == 0:
        raise CompletionError(f"frame {sparse.t}: no depth samples to complete from")
    mask = np.zeros((sparse.height, sparse.width), dtype=np.bool_)
    mask[sparse.ys, sparse.xs] = True
    vals = np.zeros((sparse.height, sparse.width), dtype=np.float64)
    vals[sparse.ys, sparse.xs] = sparse.ranges
    return DenseDepthMap(sparse.t, _nn_fill(mask, vals), NEAREST_NEIGHBOR)


def sample_depth(dense: DenseDepthMap, pixels) -> np.ndarray | float:
    """Max of the four integer corners around each (x, y), corners clamped to the image.

    Accepts a single (x, y) pair or any (..., 2) array. Non-finite pixels
    yield NaN.
    """
    values = dense.values if isinstance(dense, DenseDepthMap) else np.asarray(dense)
    p = np.asarray(pixels, dtype=np.float64)
    scalar = p.shape == (2,)
    H, W = values.shape
    finite = np.all(np.isfinite(p), axis=-1)
    x = np.where(finite, p[..., 0], 0.0)
    y = np.where(finite, p[..., 1], 0.0)
    x0 = np.floor(np.clip(x, -1.0, W)).astype(np.int64)
    y0 = np.floor(np.clip(y, -1.0, H)).astype(np.int64)
    x1 = np.clip(x0 + 1, 0, W - 1)
    y1 = np.clip(y0 + 1, 0, H - 1)
    x0 = np.clip(x0, 0, W - 1)
    y0 = np.clip(y0, 0, H - 1)
    out = np.maximum(
        np.maximum(values[y0, x0], values[y0, x1]),
        np.maximum(values[y1, x0], values[y1, x1]),
    )
    out = np.where(finite, out, np.nan)
    return float(out) if scalar else out


def import_external_depth(path, t, width, height) -> DenseDepthMap:
    """Read an externally completed width x height float32 range grid."""
    try:
        raw = read_raw(path, F32, count=width * height)
    except MissingFileError as exc:
        raise DepthImportError(str(exc)) from exc
    except CorruptFileError as exc:
        raise DepthImportError(
            f"{path}: expected {exc.expected} bytes for a {width}x{height} grid, got {exc.actual}"
        ) from exc
    return DenseDepthMap(t, raw.astype(np.float64).reshape(height, width), EXTERNAL)


def write_depth(path, dense: DenseDepthMap) -> None:
    write_raw(path, dense.values.reshape(-1), F32)


def external_depth_path(root, camera, t) -> Path:
    return Path(root) / depth_filename(camera, t - 1)


def build_depth_maps(scene, calib: CameraCalibration, method=NEAREST_NEIGHBOR,
                     external_root=None, frames=None, n_jobs=1) -> dict:
    """Dense maps for every requested frame of ``scene`` as seen by ``calib``.

    ``method`` is ``"nearest_neighbor"`` or ``"external"``. External maps are
    read from ``external_root`` (same ``depth/<camera>/frame_%05d.f32le``
    layout as the scene bundle) or, when that is None, from the files the
    scene manifest declares.
    """
    frames = list(frames) if frames is not None else list(range(1, scene.n_frames + 1))

    def one(t):
        if method == NEAREST_NEIGHBOR:
            return nn_complete(project_sweep_to_sparse(scene.sweep(t), calib, t))
        if method == EXTERNAL:
            if external_root is not None:
                path = external_depth_path(external_root, calib.camera_id, t)
            else:
                try:
                    path = scene.external_depth[calib.camera_id][t - 1]
                except KeyError:
                    raise DepthImportError(f"no external depth declared for camera {calib.camera_id}") from None
            return import_external_depth(path, t, calib.width, calib.height)
        raise ValueError(f"unknown depth completion method {method!r}")

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            maps = list(pool.map(one, frames))
    else:
        maps = [one(t) for t in frames]
    return dict(zip(frames, maps))
