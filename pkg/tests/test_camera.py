import math

import numpy as np
import pytest

from utils.camera import (LABEL_COLUMNS, LabeledImage, OdometryTrack, OracleEstimator, OrthoCamera,
                          PinholeCamera, class_map, ground_truth_map, project_traversal, render_ortho,
                          render_pinhole)
from utils.errors import ConfigurationError, ContractViolation
from utils.settings import CAMERA_DEFAULTS
from utils.terrain import render_texture


def test_pinhole_round_trip():
    camera = PinholeCamera()
    pose = (2.0, 3.0, 0.4)
    rng = np.random.default_rng(0)
    u = rng.uniform(0, camera.width - 1, 500)
    v = rng.uniform(30, camera.height - 1, 500)
    ground = camera.back_project(pose, u, v)
    assert np.isfinite(ground).all()
    u2, v2, valid = camera.project(pose, ground)
    assert valid.all()
    assert np.max(np.abs(u2 - u)) < 1e-6
    assert np.max(np.abs(v2 - v)) < 1e-6


def test_point_straight_ahead_lands_on_centre_column():
    camera = PinholeCamera()
    psi = 1.1
    pose = (5.0, 5.0, psi)
    ahead = [(5.0 + d * math.cos(psi), 5.0 + d * math.sin(psi)) for d in (1.0, 2.0, 4.0)]
    u, v, valid = camera.project(pose, ahead)
    assert valid.all()
    assert u == pytest.approx([camera.cx] * 3, abs=1e-9)
    # farther points sit higher in the image
    assert v[0] > v[1] > v[2]


def test_points_behind_the_camera_are_invalid():
    camera = PinholeCamera()
    _, _, valid = camera.project((0.0, 0.0, 0.0), [(-1.0, 0.0), (-5.0, 0.3)])
    assert not valid.any()


def test_camera_validation():
    with pytest.raises(ConfigurationError):
        PinholeCamera(fx=0.0)
    with pytest.raises(ConfigurationError):
        PinholeCamera(cx=500.0)
    with pytest.raises(ConfigurationError):
        PinholeCamera(mount_height_m=0.0)
    assert PinholeCamera.from_dict(PinholeCamera().to_dict()) == PinholeCamera()


def test_ortho_round_trip(two_class_grid):
    camera = OrthoCamera.covering(two_class_grid, 16.0)
    assert (camera.width, camera.height) == (128, 128)
    u = np.array([0.0, 10.0, 127.0])
    v = np.array([0.0, 64.0, 127.0])
    ground = camera.back_project(None, u, v)
    u2, v2, inside = camera.project(None, ground)
    assert inside.all()
    assert np.allclose(u2, u) and np.allclose(v2, v)
    assert camera.meters_per_pixel == pytest.approx(1 / 16)


def test_ortho_views_match_the_grid(two_class_grid):
    camera = OrthoCamera.covering(two_class_grid, 16.0)
    mu, rough = ground_truth_map(two_class_grid, camera)
    assert np.all(mu[:, :64] == 0.5) and np.all(mu[:, 64:] == 2.5)
    assert np.all(rough[:, 64:] == 0.3)
    cls = class_map(two_class_grid, camera)
    assert set(np.unique(cls)) == {20, 21}
    texture = render_texture(two_class_grid, 32.0, two_class_grid.seed)
    image = render_ortho(texture, 32.0, camera)
    assert image.shape == (128, 128, 3)
    assert np.array_equal(image[0, 0], texture[1, 1])


def test_pinhole_render_has_sky_on_top_and_ground_below(two_class_grid):
    camera = PinholeCamera()
    texture = render_texture(two_class_grid, 32.0, two_class_grid.seed)
    image = render_pinhole(texture, 32.0, camera, (2.0, 1.0, math.pi / 2))
    assert image.shape == (camera.height, camera.width, 3)
    assert np.all(image[0] == CAMERA_DEFAULTS["sky_color"])
    assert not np.any(np.all(image[-1] == CAMERA_DEFAULTS["sky_color"], axis=-1))
    mu, _ = ground_truth_map(two_class_grid, camera, (2.0, 1.0, math.pi / 2))
    assert np.all(np.isnan(mu[0]))
    assert np.all(np.isfinite(mu[-1]))


def _straight_track(n=61, x=2.0, y0=1.0, step=0.1):
    poses = np.array([[x, y0 + step * k, math.pi / 2] for k in range(n)])
    return OdometryTrack(OracleEstimator.poses(poses), poses)


def test_project_traversal_labels_the_path_ahead(two_class_grid):
    camera = PinholeCamera()
    track = _straight_track()
    e_true = np.column_stack([np.full(len(track), 0.5), np.full(len(track), 0.1)])
    estimates = OracleEstimator.estimates(e_true)
    labels = project_traversal(track, estimates, camera, 0, 1.0, 5.0, grid=two_class_grid)
    assert labels.shape[1] == len(LABEL_COLUMNS)
    assert 35 <= len(labels) <= 41
    src = labels[:, 4].astype(int)
    dist = np.linalg.norm(track.true[src, :2] - track.true[0, :2], axis=1)
    assert np.all((dist >= 1.0 - 1e-9) & (dist <= 5.0 + 1e-9))
    assert labels[:, 0] == pytest.approx(np.full(len(labels), camera.cx), abs=1e-6)
    assert np.all(np.diff(labels[:, 1]) < 0)
    # oracle labels agree with the terrain they were projected onto
    assert np.allclose(labels[:, 5], labels[:, 2])
    assert np.allclose(labels[:, 6], 0.1)
    assert track.window_drift(10) == 0.0


def test_project_traversal_drops_poses_out_of_range():
    camera = PinholeCamera()
    track = _straight_track(n=5)
    labels = project_traversal(track, np.ones((5, 2)), camera, 0, 1.0, 5.0)
    assert labels.shape == (0, len(LABEL_COLUMNS))
    with pytest.raises(ContractViolation):
        project_traversal(track, np.ones((6, 2)), camera, 0)


def test_labeled_image_rejects_out_of_bounds_labels():
    rgb = np.zeros((10, 20, 3), dtype=np.uint8)
    ok = np.array([[19.4, 9.4, 1.0, 0.1, 0, np.nan, np.nan]])
    LabeledImage(rgb, ok, {})
    bad = np.array([[19.5, 2.0, 1.0, 0.1, 0, np.nan, np.nan]])
    with pytest.raises(ContractViolation):
        LabeledImage(rgb, bad, {})
