"""Visibility labels from a range comparison against dense depth maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depth import DenseDepthMap, sample_depth
from .tracking import TrackSet2D

DEFAULT_TOLERANCE = 0.02


class MissingDepthError(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class OcclusionMap:
    object_id: str
    flags: np.ndarray  # (N, F) True = occluded (out-of-view folded in)
    fov: np.ndarray  # (N, F) True = projects inside the image, in front of the camera


def occlusion_flag(range_m, depth_map: DenseDepthMap, pixel, tolerance=DEFAULT_TOLERANCE):
    """True when the point lies beyond the (tolerance-inflated) surface at ``pixel``."""
    return np.asarray(range_m) > (1.0 + tolerance) * sample_depth(depth_map, pixel)


def occlusion_map(tracks2d: TrackSet2D, depth_maps, tolerance=DEFAULT_TOLERANCE) -> OcclusionMap:
    """Label every (track, frame); ``depth_maps`` maps absolute frame index to a dense map."""
    n, f = tracks2d.in_fov.shape
    flags = np.ones((n, f), dtype=bool)
    for col, t in enumerate(tracks2d.frame_indices):
        t = int(t)
        if t not in depth_maps:
            raise MissingDepthError(f"no depth map for frame {t}")
        fov = tracks2d.in_fov[:, col]
        if not fov.any():
            continue
        sampled = sample_depth(depth_maps[t], tracks2d.pixels[fov, col])
        flags[fov, col] = tracks2d.ranges[fov, col] > (1.0 + tolerance) * sampled
    return OcclusionMap(tracks2d.object_id, flags, tracks2d.in_fov.copy())
