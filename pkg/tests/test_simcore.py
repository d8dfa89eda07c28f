import numpy as np
import pytest

from utils.errors import ConfigurationError, ContractViolation, SimulationFault
from utils.simcore import (ACTION_DIM, N_FEET, OBS_DIM, OperatingMode, RobotState, SimConfig, SwipeController,
                           TrackingController, VecEnv, VelocityTrackingController, contact_forces,
                           information_proxy, make_env, payload_drag, rollout, scripted_energy, stance_mask, step)
from utils.terrain import uniform_world
from utils.trajlog import TrajectoryLog, export_csv, read_log, write_log


def test_friction_cone_holds_on_a_million_contacts():
    rng = np.random.default_rng(0)
    n = 250_000  # x 4 feet
    cfg = SimConfig()
    u = rng.uniform(-3.0, 3.0, (n, N_FEET, 2))
    v_foot = rng.uniform(-2.0, 2.0, (n, N_FEET, 2))
    stance = rng.random((n, N_FEET)) < 0.5
    mu = rng.uniform(0.25, 3.0, n)
    res = contact_forces(u, v_foot, stance, mu, cfg.stance_load, cfg.traction_gain)
    magnitude = np.linalg.norm(res.force, axis=2)
    limit = (mu * cfg.stance_load)[:, None]
    assert np.all(magnitude <= limit * (1 + 1e-12))
    assert np.all(res.force[~stance] == 0.0)
    slipping = np.linalg.norm(res.slip, axis=2) > 0
    assert np.array_equal(slipping, res.saturated)
    assert not np.any(res.saturated & ~stance)


def test_unsaturated_contact_delivers_desired_traction():
    cfg = SimConfig()
    u = np.zeros((1, N_FEET, 2))
    u[0, 0] = (0.1, 0.0)
    res = contact_forces(u, np.zeros((1, N_FEET, 2)), np.ones((1, N_FEET), bool), np.array([3.0]),
                         cfg.stance_load, cfg.traction_gain)
    assert res.force[0, 0] == pytest.approx([cfg.traction_gain * 0.1, 0.0])
    assert not res.saturated.any()


def test_trot_schedule_alternates_diagonal_pairs():
    mask = stance_mask(np.array([0.0, 0.25, 0.5, 0.99]))
    assert mask.sum(axis=1).tolist() == [2, 2, 2, 2]
    assert mask[0].tolist() == [True, False, False, True]
    assert mask[2].tolist() == [False, True, True, False]


def test_tracking_controller_keeps_robot_at_exact_rest():
    grid = uniform_world(1.0, 0.0, size_m=10.0)
    venv = VecEnv([grid], OperatingMode.free(), 2, seed=1, command=(0.0, 0.0, 0.0), spawn="center")
    venv.reset()
    start = venv.state.p.copy()
    contacts, _ = rollout(venv, TrackingController(), 100)
    assert np.array_equal(venv.state.p, start)
    assert np.all(venv.state.v == 0.0)
    assert all(np.all(c.force == 0.0) for c in contacts)


def test_vec_env_reproduces_single_envs(quadrant_grid):
    mode = OperatingMode.free()
    venv = VecEnv([quadrant_grid], mode, 3, seed=5)
    singles = [VecEnv([quadrant_grid], mode, 1, seed=5, env_seeds=[s]) for s in venv.env_seeds]
    venv.reset()
    for env in singles:
        env.reset()
    rng = np.random.default_rng(2)
    for _ in range(120):
        actions = rng.uniform(-1.5, 1.5, (3, ACTION_DIM))
        obs, _, dones, _ = venv.step(actions)
        for i, env in enumerate(singles):
            o, _, d, _ = env.step(actions[i:i + 1])
            assert np.array_equal(o[0], obs[i])
            assert d[0] == dones[i]
            assert np.array_equal(env.state.p[0], venv.state.p[i])


def test_single_env_wrapper(quadrant_grid):
    env = make_env(quadrant_grid, OperatingMode.free(), (0.5, 0.0, 0.0), seed=3)
    obs = env.reset()
    assert obs.shape == (OBS_DIM,)
    assert env.command.tolist() == [0.5, 0.0, 0.0]
    obs, contact, done, info = env.step(np.zeros(ACTION_DIM))
    assert obs.shape == (OBS_DIM,)
    assert contact.stance.sum() == 2
    assert info["e"].shape == (2,)
    assert env.horizon_steps == 1000


def test_world_too_small_is_rejected():
    with pytest.raises(ConfigurationError):
        VecEnv([uniform_world(1.0, size_m=1.5)], OperatingMode.free(), 1, seed=0)
    with pytest.raises(ConfigurationError):
        VecEnv([uniform_world(1.0, size_m=2.0)], OperatingMode.free(), 1, seed=0)


def test_non_finite_action_faults(two_class_grid):
    state = RobotState.zeros(1)
    state.p[0] = (4.0, 4.0)
    action = np.zeros(ACTION_DIM)
    action[0] = np.nan
    with pytest.raises(SimulationFault):
        step(state, action, two_class_grid, OperatingMode.free(), np.random.default_rng(0))


def test_vec_env_recovers_from_faulting_env(two_class_grid):
    venv = VecEnv([two_class_grid], OperatingMode.free(), 2, seed=0)
    venv.reset()
    actions = np.zeros((2, ACTION_DIM))
    actions[1, 0] = np.nan
    _, _, dones, info = venv.step(actions)
    assert info["fault"].tolist() == [False, True]
    assert dones[1]
    assert venv.faults == 1
    assert np.isfinite(venv.state.p).all()


def test_payload_drag_kinetic_and_static():
    cfg = SimConfig()
    mode = OperatingMode.dragging(2.0)
    mu = np.array([0.5, 0.5, 0.5])
    v = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    applied = np.array([[5.0, 0.0], [1.0, 2.0], [100.0, 0.0]])
    drag = payload_drag(applied, v, mu, mode, cfg)
    limit = 0.5 * 2.0 * cfg.gravity
    assert drag[0] == pytest.approx([-limit, 0.0])
    assert drag[1] == pytest.approx([-1.0, -2.0])
    assert drag[2] == pytest.approx([-limit, 0.0])
    assert np.all(payload_drag(applied, v, mu, OperatingMode.free(), cfg) == 0.0)


def test_operating_mode_parsing():
    assert OperatingMode.parse("payload_dragging").is_dragging
    assert OperatingMode.parse("Free").kind == "free"
    with pytest.raises(ConfigurationError):
        OperatingMode.parse("swimming")


def test_information_proxy_separates_swiping_from_tracking():
    mus = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    swipe, _ = information_proxy(mus, SwipeController(), steps=100)
    track, _ = information_proxy(mus, TrackingController(), steps=100)
    assert swipe > 0.0
    assert track < 1e-12


def test_trajectory_log_round_trip(tmp_path, two_class_grid):
    venv = VecEnv([two_class_grid], OperatingMode.free(), 2, seed=4)
    venv.reset()
    log = TrajectoryLog()
    rng = np.random.default_rng(0)
    for _ in range(10):
        actions = rng.uniform(-1.0, 1.0, (2, ACTION_DIM))
        obs, contact, _, info = venv.step(actions)
        log.append_from_venv(venv, 0, actions[0], obs[0], info, contact)
    records = log.records()
    assert len(records) == 10
    path = write_log(tmp_path / "run.tstl", records)
    loaded = read_log(path)
    assert np.array_equal(loaded, records)
    assert loaded["n_stance"].tolist() == [2] * 10
    csv_path = export_csv(tmp_path / "run.csv", loaded)
    header = csv_path.read_text().splitlines()[0].split(",")
    assert header[:3] == ["t", "p_0", "p_1"]
    assert len(csv_path.read_text().splitlines()) == 11


def test_trajectory_log_rejects_foreign_files(tmp_path):
    bad = tmp_path / "bad.tstl"
    bad.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(ContractViolation):
        read_log(bad)
    bad.write_bytes(b"TS")
    with pytest.raises(ContractViolation):
        read_log(bad)


def _dragging_speed(mu, n_seeds=50, steps=250):
    grid = uniform_world(mu, 0.0, size_m=40.0)
    venv = VecEnv([grid], OperatingMode.dragging(), n_seeds, seed=12, command=(1.0, 0.0, 0.0), spawn="center")
    venv.reset()
    controller = VelocityTrackingController()
    speeds = []
    for k in range(steps):
        venv.step(controller.act(venv))
        if k >= steps // 2:
            speeds.append(venv.state.v[:, 0].mean())
    return float(np.mean(speeds))


def test_dragging_slows_down_on_higher_friction():
    speeds = [_dragging_speed(mu) for mu in (0.5, 1.5, 3.0)]
    assert speeds[0] > speeds[1] > speeds[2] > 0.0


@pytest.mark.parametrize("mu", [0.5, 1.5, 3.0])
def test_swiping_costs_more_energy_than_tracking(mu):
    assert scripted_energy(mu, SwipeController(), steps=100) > scripted_energy(mu, TrackingController(), steps=100)


def test_uniform_spawn_keeps_the_margin():
    grid = uniform_world(1.0, 0.0, size_m=4.0)
    venv = VecEnv([grid], OperatingMode.free(), 100, seed=8)
    positions = []
    for _ in range(100):
        venv.reset()
        positions.append(venv.state.p.copy())
    positions = np.concatenate(positions)
    assert positions.shape == (10_000, 2)
    margin = SimConfig().spawn_margin_m
    assert positions.min() >= margin and positions.max() <= 4.0 - margin
