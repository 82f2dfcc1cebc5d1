"""Dense rigid-object point tracks from LiDAR sweeps, box tracks and camera calibrations."""

__version__ = "0.1.0"

from .scene import SceneBundle, load_scene_bundle, write_scene_bundle  # noqa: E402
from .tracking import build_tracks, project_to_image, propagate  # noqa: E402
from .depth import nn_complete, sample_depth  # noqa: E402
from .occlusion import occlusion_map  # noqa: E402
from .pipeline import RunConfig, annotate, evaluate, split, validate  # noqa: E402

__all__ = [
    "SceneBundle", "load_scene_bundle", "write_scene_bundle", "build_tracks", "project_to_image",
    "propagate", "nn_complete", "sample_depth", "occlusion_map", "RunConfig", "annotate",
    "evaluate", "split", "validate",
]
