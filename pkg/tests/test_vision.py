import numpy as np
import pytest

from utils.camera import LabeledImage
from utils.errors import ContractViolation, VisionDataError
from utils.vision import (N_FEATURES, BinSpec, VisionModel, VisionTrainConfig, class_summary, dense_rmse,
                          discretize, expectation, label_patch_index, patch_features, predict_dense,
                          split_frames, train_vision)


def test_discretize_clamps_and_closes_upper_edge():
    bins = BinSpec(0.0, 1.0, 4)
    assert discretize([-1.0, 0.0, 0.25, 0.999, 1.0, 2.0], bins).tolist() == [0, 0, 1, 3, 3, 3]
    with pytest.raises(VisionDataError):
        discretize([np.nan], bins)
    assert bins.centers.tolist() == pytest.approx([0.125, 0.375, 0.625, 0.875])


def test_expectation_of_one_hot_is_bin_centre():
    bins = BinSpec(0.25, 3.0, 20)
    probs = np.zeros((2, 20))
    probs[0, 3] = 1.0
    probs[1, [0, 19]] = 0.5
    out = expectation(probs, bins.centers)
    assert out[0] == pytest.approx(bins.centers[3])
    assert out[1] == pytest.approx(1.625)


def test_patch_features_are_local():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (32, 40, 3), dtype=np.uint8)
    before = patch_features(img)
    assert before.shape == (4, 5, N_FEATURES)
    changed = img.copy()
    changed[8:16, 16:24] = 255 - changed[8:16, 16:24]
    after = patch_features(changed)
    mask = np.ones((4, 5), dtype=bool)
    mask[1, 2] = False
    assert np.allclose(before[mask], after[mask], rtol=0.0, atol=1e-9)
    assert not np.array_equal(before[1, 2], after[1, 2])


def test_patch_features_reject_bad_input():
    with pytest.raises(ContractViolation):
        patch_features(np.zeros((16, 16)))
    with pytest.raises(VisionDataError):
        patch_features(np.zeros((4, 16, 3), dtype=np.uint8))


def test_label_patch_index_maps_remainder_pixels():
    row, col = label_patch_index(np.array([0.0, 7.4, 7.6, 43.0]), np.array([0.0, 0.0, 0.0, 20.0]), (2, 5))
    assert col.tolist() == [0, 0, 1, 4]
    assert row.tolist() == [0, 0, 0, 1]


def _two_texture_image(rng, size=32):
    img = np.zeros((size, size, 3), dtype=np.uint8)
    half = size // 2
    img[:, :half] = np.clip(rng.normal((200, 60, 60), 10, (size, half, 3)), 0, 255)
    img[:, half:] = np.clip(rng.normal((60, 170, 60), 40, (size, size - half, 3)), 0, 255)
    return img


def _labelled_frames(n=8, size=32, rough=(0.1, 0.3)):
    rng = np.random.default_rng(1)
    images = []
    for i in range(n):
        rgb = _two_texture_image(rng, size)
        labels = []
        for v in range(4, size, 8):
            for u in range(4, size, 8):
                left = u < size // 2
                labels.append([u, v, 0.5 if left else 2.5, rough[0] if left else rough[1], 0, np.nan, np.nan])
        images.append(LabeledImage(rgb, np.array(labels, dtype=np.float64), {"frame": i}))
    return images


def test_vision_learns_a_separable_texture_pair():
    cfg = VisionTrainConfig(epochs=40, lr=0.05, batch_size=16, holdout_fraction=0.25)
    model, curves, holdout = train_vision(_labelled_frames(), cfg, seed=0)
    assert holdout.sum() == 2
    assert len(curves["mu"]) == 40
    assert len(curves["rough"]) == 40
    test = _two_texture_image(np.random.default_rng(99))
    mu_map, rough_map, p_mu = predict_dense(test, model)
    assert mu_map.shape == (32, 32) and p_mu.shape == (4, 4, 20)
    assert abs(mu_map[:, :16].mean() - 0.5) < 0.25
    assert abs(mu_map[:, 16:].mean() - 2.5) < 0.25
    assert abs(rough_map[:, :16].mean() - 0.1) < 0.1
    assert abs(rough_map[:, 16:].mean() - 0.3) < 0.1


def test_single_bin_labels_cannot_train():
    frames = _labelled_frames(n=3)
    for im in frames:
        im.labels[:, 2] = 1.0
    with pytest.raises(VisionDataError, match="at least two distinct bins"):
        train_vision(frames, VisionTrainConfig(epochs=1), seed=0)


def test_flat_roughness_cannot_train():
    with pytest.raises(VisionDataError, match="roughness labels fall into 1 bin"):
        train_vision(_labelled_frames(n=3, rough=(0.2, 0.2)), VisionTrainConfig(epochs=1), seed=0)


def test_unlabelled_dataset_is_rejected():
    rgb = np.zeros((16, 16, 3), dtype=np.uint8)
    with pytest.raises(VisionDataError):
        train_vision([LabeledImage(rgb, np.zeros((0, 7)), {})], VisionTrainConfig(), seed=0)


def test_model_round_trip_and_dense_shape(tmp_path):
    model, _, _ = train_vision(_labelled_frames(n=4), VisionTrainConfig(epochs=2), seed=3)
    loaded = VisionModel.load(model.save(tmp_path / "vision.tsnn"))
    img = np.random.default_rng(0).integers(0, 256, (70, 90, 3), dtype=np.uint8)
    a = predict_dense(img, model)
    b = predict_dense(img, loaded)
    assert a[0].shape == (70, 90)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_split_frames_is_seeded():
    a = split_frames(20, 0.1, seed=4)
    assert a.sum() == 2
    assert np.array_equal(a, split_frames(20, 0.1, seed=4))
    assert split_frames(1, 0.5, seed=4).sum() == 0


def test_dense_rmse_ignores_missing_truth():
    pred = np.array([1.0, 2.0, 3.0])
    truth = np.array([1.0, np.nan, 5.0])
    assert dense_rmse(pred, truth) == pytest.approx(np.sqrt(2.0))
    assert np.isnan(dense_rmse(pred, np.full(3, np.nan)))


def test_class_summary_groups_by_class_then_source():
    entries = {"labels": (np.array([1, 1, 2]), np.array([0.4, 0.6, 2.0])),
               "truth": (np.array([2, 1]), np.array([2.5, np.nan]))}
    rows = class_summary(entries, {1: "slick", 2: "grippy"})
    assert [r[:2] for r in rows] == [["slick", "labels"], ["grippy", "labels"], ["grippy", "truth"]]
    assert rows[0][2] == pytest.approx(0.5)
    assert rows[0][4] == 2
