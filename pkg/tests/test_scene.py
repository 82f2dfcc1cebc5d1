import numpy as np
import pytest

from conftest import random_pose
from lidartracks.scene import (
    BOX_RECORD,
    AlignmentError,
    BoxTrack,
    CameraCalibration,
    CorruptionError,
    IngestionError,
    load_scene_bundle,
    points_in_box,
    write_scene_bundle,
)
from lidartracks.synthetic import generate_scene
from lidartracks.transforms import RigidTransform, apply_matrix
from synth_cases import wall_scenario


@pytest.fixture(scope="module")
def small_bundle():
    bundle, _ = generate_scene(wall_scenario(seed=2, frames=6, density=60.0))
    return bundle


@pytest.fixture
def bundle_dir(tmp_path, small_bundle):
    return write_scene_bundle(small_bundle, tmp_path / "scene")


def test_box_record_layout():
    assert BOX_RECORD.itemsize == 8 + 16 * 8 + 3 * 8 + 3 * 8


def test_round_trip_bit_identical(small_bundle, bundle_dir):
    back = load_scene_bundle(bundle_dir)
    assert back.n_frames == small_bundle.n_frames
    assert np.array_equal(back.ego_poses, small_bundle.ego_poses)
    for a, b in zip(back.sweeps, small_bundle.sweeps):
        assert np.array_equal(a, b)
    for cam, calib in small_bundle.calibrations.items():
        assert np.array_equal(back.calibrations[cam].K, calib.K)
        assert np.array_equal(back.calibrations[cam].extrinsic.matrix, calib.extrinsic.matrix)
    for obj, track in small_bundle.box_tracks.items():
        got = back.box_tracks[obj]
        assert np.array_equal(got.frames, track.frames)
        assert np.array_equal(got.poses, track.poses)
        assert np.array_equal(got.velocities, track.velocities)
    assert [f.t for f in back.frames] == list(range(1, back.n_frames + 1))


def test_loading_is_deterministic(bundle_dir):
    a, b = load_scene_bundle(bundle_dir), load_scene_bundle(bundle_dir)
    assert all(np.array_equal(x, y) for x, y in zip(a.sweeps, b.sweeps))


def test_short_ego_pose_file_is_alignment_error(bundle_dir):
    path = bundle_dir / "ego_poses.f64le"
    path.write_bytes(path.read_bytes()[:-128])
    with pytest.raises(AlignmentError, match="ego_poses"):
        load_scene_bundle(bundle_dir)


def test_ragged_point_file_is_corruption(bundle_dir):
    path = bundle_dir / "sweeps" / "frame_00002.xyz.f32le"
    data = path.read_bytes()
    path.write_bytes(data + b"\x00\x00\x00\x00")
    with pytest.raises(CorruptionError) as info:
        load_scene_bundle(bundle_dir)
    assert info.value.actual == len(data) + 4
    assert "frame_00002" in str(info.value)


def test_missing_file_is_named(bundle_dir):
    (bundle_dir / "sweeps" / "frame_00003.xyz.f32le").unlink()
    with pytest.raises(IngestionError, match="frame_00003"):
        load_scene_bundle(bundle_dir)


def test_corrupt_box_file(bundle_dir):
    path = next((bundle_dir / "boxes").iterdir())
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(CorruptionError):
        load_scene_bundle(bundle_dir)


def test_box_outside_frame_range(small_bundle):
    track = next(iter(small_bundle.box_tracks.values()))
    bad = BoxTrack(track.object_id, track.frames + 1, track.poses, track.dims)
    with pytest.raises(AlignmentError):
        type(small_bundle)(small_bundle.frames, small_bundle.calibrations, small_bundle.ego_poses,
                           small_bundle.sweeps, {track.object_id: bad})


def test_box_track_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        BoxTrack("a", [2, 1], np.stack([np.eye(4)] * 2), np.ones((2, 3)))
    with pytest.raises(ValueError, match="positive"):
        BoxTrack("a", [1], np.eye(4)[None], np.array([[1.0, 0.0, 1.0]]))


def test_calibration_validation():
    with pytest.raises(ValueError):
        CameraCalibration("front", np.array([[0, 0, 0], [0, 1, 0], [0, 0, 1.0]]), RigidTransform.identity(), 4, 4)
    with pytest.raises(ValueError):
        CameraCalibration("rear", np.eye(3), RigidTransform.identity(), 4, 4)
    with pytest.raises(ValueError):
        CameraCalibration("front", np.eye(3), RigidTransform.identity(), 0, 4)


def test_points_in_box_half_extent():
    pts = np.array([[0.0, 0, 0], [0.49, 0, 0], [0.51, 0, 0]])
    got = points_in_box(pts, np.eye(4), [1, 1, 1], np.eye(4))
    assert np.array_equal(got, pts[:2])


def test_points_in_box_closed_interval():
    pts = np.array([[0.5, 0.5, -0.5]])
    assert len(points_in_box(pts, np.eye(4), [1, 1, 1], np.eye(4))) == 1


def test_points_in_box_rotated():
    # 90 deg about z: local x maps to world y. A long thin box: 1 x 0.2 x 0.2.
    box = RigidTransform.from_yaw(np.pi / 2).matrix
    local = np.array([0.4, 0.0, 0.0])
    world = box[:3, :3] @ local  # by hand: (0, 0.4, 0)
    assert np.allclose(world, [0.0, 0.4, 0.0])
    kept = points_in_box(np.array([world, [0.4, 0.0, 0.0]]), box, [1.0, 0.2, 0.2], np.eye(4))
    assert np.allclose(kept, [world])


def test_points_in_box_empty_sweep():
    assert points_in_box(np.zeros((0, 3)), np.eye(4), [1, 1, 1], np.eye(4)).shape == (0, 3)


def test_points_in_box_order_preserved(rng):
    pts = rng.uniform(-1, 1, (200, 3))
    kept = points_in_box(pts, np.eye(4), [1, 1, 1], np.eye(4))
    mask = np.all(np.abs(pts) <= 0.5, axis=1)
    assert np.array_equal(kept, pts[mask])


def test_containment_invariant_under_rigid_motion(rng):
    for _ in range(20):
        pts = rng.uniform(-3, 3, (300, 3))
        box = random_pose(rng, 1.0)
        dims = rng.uniform(0.5, 3, 3)
        G = random_pose(rng)
        a = points_in_box(pts, box, dims, np.eye(4))
        b = points_in_box(apply_matrix(G, pts), G @ box, dims, np.eye(4))
        assert len(a) == len(b)
        assert np.allclose(apply_matrix(G, a), b)


def test_ego_pose_enters_box_test():
    ego = RigidTransform.from_rt(np.eye(3), [10.0, 0, 0]).matrix
    box = RigidTransform.from_rt(np.eye(3), [12.0, 0, 0]).matrix
    # ego-frame (2, 0, 0) is world (12, 0, 0): the box centre
    assert len(points_in_box(np.array([[2.0, 0, 0]]), box, [1, 1, 1], ego)) == 1
