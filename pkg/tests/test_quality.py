import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pose
from lidartracks.quality import (
    DEFAULT_MAX_MIN_DISTANCE,
    DEFAULT_MIN_FRAMES,
    REASON_CAMERA,
    REASON_DISTANCE,
    REASON_FRAMES,
    REASON_RETURNS,
    ValidationError,
    consistent_tracks,
    eligibility,
    speed_error_stats,
)
from lidartracks.scene import BoxTrack, CameraCalibration
from lidartracks.synthetic import generate_scene
from lidartracks.tracking import TrackSet2D, TrackSet3D, build_tracks
from lidartracks.transforms import RigidTransform
from synth_cases import constant_velocity_scenario


def test_default_thresholds():
    assert DEFAULT_MIN_FRAMES == 24
    assert DEFAULT_MAX_MIN_DISTANCE == 20.0


def calib(camera_id="front"):
    return CameraCalibration(camera_id, np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]]),
                             RigidTransform.identity(), 100, 100)


def setup(visible_frames, F=60, distance=10.0):
    """Box straight ahead (camera z) at ``distance``; in_fov True on the given 1-based frames."""
    frames = np.arange(1, F + 1)
    pose = RigidTransform.from_rt(np.eye(3), [0.0, 0.0, distance]).matrix
    track = BoxTrack("obj", frames, np.stack([pose] * F), np.ones((F, 3)))
    in_fov = np.zeros((2, F), bool)
    in_fov[0, np.asarray(list(visible_frames)) - 1] = True
    t2 = TrackSet2D("obj", "front", 1, np.zeros((2, F, 2)), np.ones((2, F)), in_fov, np.ones(2, np.int64))
    return track, t2, np.stack([np.eye(4)] * F)


def test_eligible_when_all_filters_pass():
    track, t2, ego = setup(range(1, 31), F=30)
    rep = eligibility(track, t2, "front", ego_poses=ego, calib=calib())
    assert rep.eligible and rep.reasons == []
    assert rep.longest_in_fov_run == 30 and rep.in_fov_frames == 30
    assert np.isclose(rep.min_distance, 10.0)


def test_leaves_and_returns():
    track, t2, ego = setup(list(range(1, 11)) + list(range(30, 61)))
    rep = eligibility(track, t2, "front", ego_poses=ego, calib=calib())
    assert not rep.eligible
    assert rep.reasons == [REASON_RETURNS]
    assert rep.longest_in_fov_run == 31 and rep.in_fov_frames == 41


def test_too_short():
    track, t2, ego = setup(range(5, 28))  # 23 frames
    rep = eligibility(track, t2, "front", ego_poses=ego, calib=calib())
    assert rep.reasons == [REASON_FRAMES]


def test_exactly_min_frames_passes():
    track, t2, ego = setup(range(5, 29))  # 24 frames
    assert eligibility(track, t2, "front", ego_poses=ego, calib=calib()).eligible


def test_far_object():
    track, t2, ego = setup(range(1, 61), distance=30.0)
    rep = eligibility(track, t2, "front", ego_poses=ego, calib=calib())
    assert rep.reasons == [REASON_DISTANCE]


def test_side_camera():
    track, t2, ego = setup(range(1, 61))
    rep = eligibility(track, t2, "side_left", ego_poses=ego, calib=calib("side_left"))
    assert rep.reasons == [REASON_CAMERA]


@pytest.mark.parametrize("cam", ["front", "front_left", "front_right"])
def test_front_cameras_allowed(cam):
    track, t2, ego = setup(range(1, 61))
    assert eligibility(track, t2, cam, ego_poses=ego, calib=calib(cam)).eligible


@settings(max_examples=40, deadline=None)
@given(start=st.integers(1, 40), length=st.integers(1, 60), dist=st.floats(1, 40),
       min_frames=st.integers(1, 40), max_dist=st.floats(1, 40))
def test_filters_monotone(start, length, dist, min_frames, max_dist):
    F = 60
    track, t2, ego = setup(range(start, min(start + length, F + 1)), F=F, distance=dist)
    strict = eligibility(track, t2, "front", ego_poses=ego, calib=calib(), min_frames=min_frames,
                         max_min_distance=max_dist)
    relaxed = eligibility(track, t2, "front", ego_poses=ego, calib=calib(), min_frames=max(1, min_frames - 5),
                          max_min_distance=max_dist + 5)
    assert not (strict.eligible and not relaxed.eligible)


def moving_tracks(speeds, annotated=1.0, F=5, frame_rate=10.0):
    """Tracks moving along x at the given speeds with a static ego."""
    steps = np.arange(F) / frame_rate
    tracks = np.zeros((len(speeds), F, 3))
    tracks[..., 0] = np.asarray(speeds)[:, None] * steps[None]
    ts = TrackSet3D("obj", 1, tracks, np.ones(len(speeds), np.int64))
    box = BoxTrack("obj", np.arange(1, F + 1), np.stack([np.eye(4)] * F), np.ones((F, 3)),
                   np.tile([annotated, 0.0, 0.0], (F, 1)))
    return ts, np.stack([np.eye(4)] * F), box


def test_percentiles_by_hand():
    ts, ego, box = moving_tracks([2.0, 3.0, 4.0, 5.0, 6.0])
    stats = speed_error_stats(ts, ego, box, 10.0)
    assert np.allclose(stats.errors, [1, 2, 3, 4, 5])
    # linear interpolation at q/100 * (n - 1)
    expected = {"p25": 2.0, "p50": 3.0, "p75": 4.0, "p95": 4.8, "p99": 4.96}
    for k, v in expected.items():
        assert np.isclose(stats.percentiles()[k], v), k
    vals = list(stats.percentiles().values())
    assert vals == sorted(vals)


def test_missing_velocity():
    ts, ego, box = moving_tracks([1.0])
    box = BoxTrack("obj", box.frames, box.poses, box.dims)
    with pytest.raises(ValidationError):
        speed_error_stats(ts, ego, box, 10.0)


def test_constant_velocity_synthetic():
    scenario = constant_velocity_scenario(frames=12, density=30.0)
    bundle, _ = generate_scene(scenario)
    track = bundle.box_tracks["mover"]
    clouds = {t: bundle.object_points("mover", t) for t in range(1, 13)}
    ts = build_tracks(clouds, bundle.ego_poses, track)
    stats = speed_error_stats(ts, bundle.ego_poses, track, bundle.frame_rate)
    assert stats.errors.max() < 1e-9


def test_invariant_under_world_change(rng):
    F = 6
    ego = np.stack([random_pose(rng) for _ in range(F)])
    box_poses = np.stack([random_pose(rng) for _ in range(F)])
    vel = rng.normal(size=(F, 3))
    box = BoxTrack("obj", np.arange(1, F + 1), box_poses, np.ones((F, 3)), vel)
    ts = build_tracks({2: rng.normal(size=(20, 3))}, ego, box)
    G = random_pose(rng)
    box_g = BoxTrack("obj", box.frames, G @ box_poses, box.dims, vel @ G[:3, :3].T)
    a = speed_error_stats(ts, ego, box, 10.0)
    b = speed_error_stats(ts, G @ ego, box_g, 10.0)
    assert np.allclose(a.errors, b.errors, atol=1e-9)


def test_consistent_tracks_threshold():
    ts, ego, box = moving_tracks([1.0, 1.5, 4.0])
    stats = speed_error_stats(ts, ego, box, 10.0)
    assert consistent_tracks(stats).all()
    assert consistent_tracks(stats, 1.0).tolist() == [True, True, False]
