import numpy as np
import pytest

from utils.camera import PinholeCamera
from utils.costmap import CostConfig, CostCurve, CostMap, block_mean, build_cost_map, cost_from_mu, measure_cost_curve
from utils.dataset import DataConfig, build_dataset, load_dataset, save_dataset
from utils.errors import ConfigurationError, ContractViolation, MissingArtifactError
from utils.trajlog import read_log


@pytest.fixture
def curve():
    return CostCurve("free", [0.25, 1.0, 3.0], [4.0, 2.0, 1.0])


def test_cost_interpolates_and_clamps(curve):
    out = cost_from_mu([0.0, 0.25, 0.625, 2.0, 5.0], curve)
    assert out.tolist() == pytest.approx([4.0, 4.0, 3.0, 1.5, 1.0])


def test_cost_curve_validation():
    with pytest.raises(ContractViolation):
        CostCurve("free", [0.25, 1.0], [1.0])
    with pytest.raises(ContractViolation):
        CostCurve("free", [1.0, 0.25], [1.0, 2.0])
    with pytest.raises(ContractViolation):
        CostCurve("free", [0.25, 1.0], [1.0, 0.0])


def test_cost_curve_file_round_trip(tmp_path, curve):
    curve.meta["policy"] = "passive-se-s0"
    loaded = CostCurve.load(curve.save(tmp_path / "cost_curve.csv"))
    assert loaded.mode == "free"
    assert np.array_equal(loaded.cost, curve.cost)
    assert loaded.meta["policy"] == "passive-se-s0"
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ContractViolation):
        CostCurve.load(tmp_path / "bad.csv")


def test_block_mean_handles_partial_blocks_and_nan():
    values = np.arange(15, dtype=np.float64).reshape(3, 5)
    values[0, 0] = np.nan
    out = block_mean(values, 2)
    assert out.shape == (2, 3)
    assert out[0, 0] == pytest.approx((1 + 5 + 6) / 3)
    assert out[0, 2] == pytest.approx((4 + 9) / 2)
    assert out[1, 2] == pytest.approx(14.0)
    assert np.isnan(block_mean(np.full((2, 2), np.nan), 2)[0, 0])


def test_cost_map_marks_unseen_blocks_untraversable(curve):
    mu = np.full((4, 4), 1.0)
    mu[:2, :2] = np.nan
    costmap, cells = build_cost_map(mu, 0.5, curve, downsample=2, provenance={"world": "t"})
    assert costmap.cell_m == 1.0
    assert np.isinf(costmap.cost[0, 0])
    assert costmap.cost[1, 1] == pytest.approx(2.0)
    assert costmap.provenance == {"mode": "free", "downsample": 2, "world": "t"}
    assert np.isnan(cells[0, 0])
    with pytest.raises(ConfigurationError):
        build_cost_map(mu, 0.0, curve)
    with pytest.raises(ContractViolation):
        CostMap(np.array([[np.nan]]), 1.0)


def test_cost_map_file_round_trip(tmp_path, curve):
    costmap, _ = build_cost_map(np.array([[0.25, np.nan], [1.0, 3.0]]), 1.0, curve)
    loaded = CostMap.load(costmap.save(tmp_path / "costmap.csv"), 1.0)
    assert np.array_equal(loaded.cost, costmap.cost)


def test_cost_config_validation():
    with pytest.raises(ConfigurationError):
        CostConfig(mu_points=1)
    with pytest.raises(ConfigurationError):
        CostConfig(command_speed=2.0, horizon_s=20.0, world_size_m=60.0)
    assert CostConfig(mu_points=3, mu_min=0.5, mu_max=1.5).mu_grid().tolist() == [0.5, 1.0, 1.5]


def test_measure_cost_curve_smoke(tiny_checkpoint):
    cfg = CostConfig(mu_points=2, n_agents=2, horizon_s=1.0, world_size_m=10.0, max_retries=0)
    curve = measure_cost_curve(tiny_checkpoint, "dragging", cfg, seed=3, jobs=2)
    assert curve.mode == "dragging"
    assert curve.mu_grid.tolist() == [0.25, 3.0]
    assert np.all((curve.cost > 0) & (curve.cost <= cfg.cost_cap))
    assert curve.meta["policy"] == "active-se-s0"
    again = measure_cost_curve(tiny_checkpoint, "dragging", cfg, seed=3, jobs=1)
    assert np.array_equal(again.cost, curve.cost)


def test_dataset_collection_and_round_trip(tmp_path, tiny_checkpoint, two_class_grid):
    camera = PinholeCamera()
    cfg = DataConfig(minutes=0.05, fps=5.0, episode_s=4.0)
    images, summaries = build_dataset(tiny_checkpoint, [two_class_grid], cfg, camera, seed=0, jobs=2,
                                      log_dir=tmp_path / "dataset" / "trajectories")
    assert 0 < len(images) <= cfg.n_frames
    assert images[0].rgb.shape == (camera.height, camera.width, 3)
    assert summaries and summaries[0]["world"] == "two_class"
    records = read_log(tmp_path / "dataset" / summaries[0]["log"])
    assert len(records) == summaries[0]["steps"]
    assert set(np.round(records["mu"], 6)) <= {0.5, 2.5}
    assert (tmp_path / "dataset" / summaries[0]["log"]).with_suffix(".csv").exists()
    again, _ = build_dataset(tiny_checkpoint, [two_class_grid], cfg, camera, seed=0, jobs=1)
    assert len(again) == len(images)
    assert all(np.array_equal(a.rgb, b.rgb) for a, b in zip(images, again))

    save_dataset(tmp_path / "dataset", images, summaries, camera)
    loaded, manifest = load_dataset(tmp_path / "dataset")
    assert len(loaded) == len(images)
    assert PinholeCamera.from_dict(manifest["camera"]) == camera
    for a, b in zip(images, loaded):
        assert np.array_equal(a.rgb, b.rgb)
        assert np.allclose(a.labels, b.labels, rtol=1e-9, equal_nan=True)
        assert b.meta["pose"] == a.meta["pose"]


def test_missing_dataset_names_its_producer(tmp_path):
    with pytest.raises(MissingArtifactError, match="collect-data"):
        load_dataset(tmp_path / "nowhere")
