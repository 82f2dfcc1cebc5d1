"""scikit-learn style wrappers around the functional core.

These give the depth completion and the annotation pipeline the familiar
``fit``/``predict``/``transform`` and ``get_params``/``set_params`` surface,
so they can be configured and cloned like any other estimator. The work
itself is done by :mod:`lidartracks.depth` and :mod:`lidartracks.pipeline`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_pixels, check_positive
from .depth import nn_complete, sample_depth, sparse_from_samples
from .occlusion import DEFAULT_TOLERANCE
from .pipeline import RunConfig, annotate_scene
from .quality import DEFAULT_MAX_MIN_DISTANCE, DEFAULT_MIN_FRAMES
from .scene import SceneBundle


class NearestNeighborDepth(BaseEstimator):
    """Dense depth from sparse samples by exact nearest-neighbour fill.

    ``fit(X, y)`` takes integer pixel coordinates ``X`` (M, 2) as ``(x, y)``
    and ranges ``y``. ``predict`` samples the completed map at sub-pixel
    locations with the four-neighbour maximum.

    >>> est = NearestNeighborDepth(width=2, height=2).fit([[0, 0]], [5.0])
    >>> est.predict([[1.5, 1.5]]).tolist()
    [5.0]
    """

    def __init__(self, width=None, height=None):
        self.width = width
        self.height = height

    def fit(self, X, y):
        X = check_pixels(X)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} samples but y has {len(y)}")
        width = check_positive(self.width, "width")
        height = check_positive(self.height, "height")
        sparse = sparse_from_samples(X[:, 0], X[:, 1], y, int(width), int(height))
        self.depth_map_ = nn_complete(sparse)
        self.n_samples_ = len(sparse)
        return self

    def predict(self, X):
        check_is_fitted(self, "depth_map_")
        return sample_depth(self.depth_map_, check_pixels(X))


class PointTrackAnnotator(TransformerMixin, BaseEstimator):
    """Per-point 2D/3D tracks with occlusion labels for every object in a scene.

    ``fit(scene)`` annotates the scene and stores the result in ``entries_``.
    ``transform(scene)`` returns the entries of a scene: one dict per
    (object, camera), with ``arrays`` present for eligible pairs only.
    """

    def __init__(self, cameras=None, depth="nearest_neighbor", tolerance=DEFAULT_TOLERANCE,
                 min_frames=DEFAULT_MIN_FRAMES, max_min_distance=DEFAULT_MAX_MIN_DISTANCE,
                 stride=1, max_speed_error=None, objects=None, n_jobs=1):
        self.cameras = cameras
        self.depth = depth
        self.tolerance = tolerance
        self.min_frames = min_frames
        self.max_min_distance = max_min_distance
        self.stride = stride
        self.max_speed_error = max_speed_error
        self.objects = objects
        self.n_jobs = n_jobs

    def to_config(self, **extra) -> RunConfig:
        return RunConfig(
            cameras=self.cameras, depth=self.depth, tolerance=self.tolerance,
            min_frames=self.min_frames, max_min_distance=self.max_min_distance, stride=self.stride,
            max_speed_error=self.max_speed_error, objects=self.objects, workers=self.n_jobs, **extra,
        )

    def fit(self, scene, y=None):
        if not isinstance(scene, SceneBundle):
            raise TypeError(f"expected a SceneBundle, got {type(scene).__name__}")
        self.entries_ = annotate_scene(scene, self.to_config())
        self.scene_name_ = scene.name
        return self

    def transform(self, scene):
        check_is_fitted(self, "entries_")
        if scene.name == self.scene_name_:
            return self.entries_
        return annotate_scene(scene, self.to_config())

    @property
    def eligible_(self):
        check_is_fitted(self, "entries_")
        return [e for e in self.entries_ if e["eligible"]]
