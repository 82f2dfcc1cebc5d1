"""TAP-style point-tracking metrics.

All counts are over (point, frame) pairs. Query frames are scored like any
other frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

THRESHOLDS = (1, 2, 4, 8, 16)
DEFAULT_RESOLUTION = (256, 256)
DEFAULT_QUERY_COUNT = 50


class UndefinedMetricError(ValueError):
    pass


class EvaluationError(ValueError):
    pass


@dataclass(eq=False)
class EvalInput:
    pred_xy: np.ndarray  # (N, F, 2)
    gt_xy: np.ndarray  # (N, F, 2)
    gt_occluded: np.ndarray  # (N, F) bool
    pred_occluded: np.ndarray | None = None
    query_points: list = field(default_factory=list)  # (point index, query column)
    resolution: tuple = DEFAULT_RESOLUTION  # (width, height) of the coordinates

    def __post_init__(self):
        self.pred_xy = np.asarray(self.pred_xy, dtype=np.float64)
        self.gt_xy = np.asarray(self.gt_xy, dtype=np.float64)
        self.gt_occluded = np.asarray(self.gt_occluded, dtype=bool)
        if self.pred_xy.shape != self.gt_xy.shape or self.pred_xy.ndim != 3 or self.pred_xy.shape[-1] != 2:
            raise EvaluationError(f"track shapes disagree: {self.pred_xy.shape} vs {self.gt_xy.shape}")
        if self.gt_occluded.shape != self.gt_xy.shape[:2]:
            raise EvaluationError("ground-truth occlusion shape does not match tracks")
        if self.pred_occluded is not None:
            self.pred_occluded = np.asarray(self.pred_occluded, dtype=bool)
            if self.pred_occluded.shape != self.gt_occluded.shape:
                raise EvaluationError("predicted occlusion shape does not match tracks")
        for i, f in self.query_points:
            if self.gt_occluded[i, f]:
                raise EvaluationError(f"query point {i} is not visible at its query frame {f}")

    @property
    def has_occlusion(self) -> bool:
        return self.pred_occluded is not None

    def subset(self, rows) -> EvalInput:
        rows = np.asarray(rows)
        return EvalInput(
            self.pred_xy[rows], self.gt_xy[rows], self.gt_occluded[rows],
            None if self.pred_occluded is None else self.pred_occluded[rows],
            [], self.resolution,
        )

    def rescaled(self, resolution) -> EvalInput:
        if resolution is None or tuple(resolution) == tuple(self.resolution):
            return self
        scale = np.array(resolution, dtype=np.float64) / np.array(self.resolution, dtype=np.float64)
        return EvalInput(self.pred_xy * scale, self.gt_xy * scale, self.gt_occluded,
                         self.pred_occluded, list(self.query_points), tuple(resolution))


@dataclass
class EvalReport:
    delta: dict
    delta_avg: float
    per_point_mean_error: np.ndarray
    resolution: tuple
    occlusion_accuracy: float | None = None
    average_jaccard: float | None = None
    jaccard: dict | None = None

    def to_dict(self) -> dict:
        return {
            "resolution": list(self.resolution),
            "delta": {str(k): float(v) for k, v in self.delta.items()},
            "delta_avg": float(self.delta_avg),
            "occlusion_accuracy": None if self.occlusion_accuracy is None else float(self.occlusion_accuracy),
            "average_jaccard": None if self.average_jaccard is None else float(self.average_jaccard),
            "jaccard": None if self.jaccard is None else {str(k): float(v) for k, v in self.jaccard.items()},
            "n_points": int(len(self.per_point_mean_error)),
        }


def _errors(inp: EvalInput) -> np.ndarray:
    return np.linalg.norm(inp.pred_xy - inp.gt_xy, axis=-1)


def position_accuracy(inp: EvalInput, thresholds=THRESHOLDS):
    """Fraction of ground-truth-visible pairs within each pixel threshold, and their mean."""
    visible = ~inp.gt_occluded
    n_visible = int(visible.sum())
    if n_visible == 0:
        raise UndefinedMetricError("no visible ground-truth points")
    err = _errors(inp)[visible]
    delta = {thr: int(np.count_nonzero(err <= thr)) / n_visible for thr in thresholds}
    return delta, float(np.mean([delta[thr] for thr in thresholds]))


def occlusion_accuracy(inp: EvalInput):
    """Occlusion classification accuracy, or None when predictions carry no occlusion."""
    if not inp.has_occlusion:
        return None
    return int(np.count_nonzero(inp.pred_occluded == inp.gt_occluded)) / inp.gt_occluded.size


def average_jaccard(inp: EvalInput, thresholds=THRESHOLDS):
    """Per-threshold Jaccard and their mean; None when occlusion is not predicted."""
    if not inp.has_occlusion:
        return None
    err = _errors(inp)
    gt_vis = ~inp.gt_occluded
    pred_vis = ~inp.pred_occluded
    jac = {}
    for thr in thresholds:
        close = err <= thr
        tp = np.count_nonzero(pred_vis & gt_vis & close)
        fp = np.count_nonzero(pred_vis & (inp.gt_occluded | ~close))
        fn = np.count_nonzero(gt_vis & (inp.pred_occluded | ~close))
        if tp + fp + fn == 0:
            raise UndefinedMetricError(f"Jaccard undefined at threshold {thr}: no positives")
        jac[thr] = tp / (tp + fp + fn)
    return jac, float(np.mean([jac[thr] for thr in thresholds]))


def per_point_errors(inp: EvalInput) -> np.ndarray:
    """Mean pixel error of each point over its ground-truth-visible frames (NaN if none)."""
    visible = ~inp.gt_occluded
    err = np.where(visible, _errors(inp), 0.0)
    counts = visible.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, err.sum(axis=1) / counts, np.nan)


def error_histogram(inp: EvalInput, bins=10.0):
    """Histogram of per-point mean errors.

    ``bins`` is either a bin width in pixels (bins start at 0) or an explicit
    array of edges. Returns ``(counts, edges, per_point)``.
    """
    per_point = per_point_errors(inp)
    counts, edges = histogram_values(per_point, bins)
    return counts, edges, per_point


def histogram_values(values, bins=10.0):
    """Histogram of the finite entries of ``values``; ``bins`` as in :func:`error_histogram`."""
    values = np.asarray(values, dtype=np.float64)
    vals = values[np.isfinite(values)]
    if np.ndim(bins) == 0:
        width = float(bins)
        top = max(float(vals.max()) if len(vals) else 0.0, 0.0)
        n = int(np.floor(top / width)) + 1
        edges = np.arange(n + 1) * width
    else:
        edges = np.asarray(bins, dtype=np.float64)
    return np.histogram(vals, bins=edges)


def sample_query_points(gt_occluded, query_frame=None, count=DEFAULT_QUERY_COUNT, seed=0):
    """Seeded uniform sample of points visible at ``query_frame`` (column index).

    With no frame given, the first column with any visible point is used.
    """
    gt_occluded = np.asarray(gt_occluded, dtype=bool)
    if query_frame is None:
        cols = np.flatnonzero((~gt_occluded).any(axis=0))
        if len(cols) == 0:
            return []
        query_frame = int(cols[0])
    candidates = np.flatnonzero(~gt_occluded[:, query_frame])
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(candidates, size=min(count, len(candidates)), replace=False))
    return [(int(i), int(query_frame)) for i in chosen]


def evaluate_tracks(inp: EvalInput, thresholds=THRESHOLDS, resolution=DEFAULT_RESOLUTION) -> EvalReport:
    """All metrics for one video; ``resolution=None`` scores at native resolution."""
    scaled = inp.rescaled(resolution)
    delta, delta_avg = position_accuracy(scaled, thresholds)
    aj = average_jaccard(scaled, thresholds)
    return EvalReport(
        delta=delta,
        delta_avg=delta_avg,
        per_point_mean_error=per_point_errors(scaled),
        resolution=tuple(scaled.resolution),
        occlusion_accuracy=occlusion_accuracy(scaled),
        average_jaccard=None if aj is None else aj[1],
        jaccard=None if aj is None else aj[0],
    )
