import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lidartracks.depth import nn_complete, sample_depth, sparse_from_samples
from lidartracks.estimators import NearestNeighborDepth, PointTrackAnnotator
from lidartracks.synthetic import generate_scene
from synth_cases import wall_scenario


def test_nn_depth_params_and_clone():
    est = NearestNeighborDepth(width=8, height=6)
    assert est.get_params() == {"width": 8, "height": 6}
    c = clone(est).set_params(width=4)
    assert c.width == 4 and est.width == 8


def test_nn_depth_matches_functional_core(rng):
    xy = np.column_stack([rng.integers(0, 32, 40), rng.integers(0, 24, 40)])
    r = rng.uniform(1, 50, 40)
    est = NearestNeighborDepth(32, 24).fit(xy, r)
    dense = nn_complete(sparse_from_samples(xy[:, 0], xy[:, 1], r, 32, 24))
    np.testing.assert_array_equal(est.depth_map_.values, dense.values)
    q = rng.uniform(0, 31, (100, 2))
    np.testing.assert_array_equal(est.predict(q), sample_depth(dense, q))


def test_nn_depth_errors():
    with pytest.raises(NotFittedError):
        NearestNeighborDepth(2, 2).predict([[0, 0]])
    with pytest.raises(ValueError):
        NearestNeighborDepth(2, 2).fit([[0, 0]], [1.0, 2.0])
    with pytest.raises(ValueError):
        NearestNeighborDepth(None, 2).fit([[0, 0]], [1.0])


def test_annotator():
    bundle, _ = generate_scene(wall_scenario(seed=0, frames=25, density=60.0))
    ann = PointTrackAnnotator(n_jobs=2)
    assert clone(ann).get_params()["min_frames"] == 24
    with pytest.raises(NotFittedError):
        ann.eligible_
    entries = ann.fit(bundle).transform(bundle)
    assert [e["object_id"] for e in entries] == ["car"]
    assert len(ann.eligible_) == 1 and ann.eligible_[0]["arrays"]["tracks_2d"].shape[1] == 25
    strict = PointTrackAnnotator(min_frames=30).fit(bundle)
    assert strict.eligible_ == [] and strict.entries_[0]["reasons"] == ["min_frames"]
    with pytest.raises(TypeError):
        ann.fit("scene")
