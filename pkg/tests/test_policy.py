import math

import numpy as np
import pytest

from utils.errors import ConfigurationError
from utils.nn import AdamState, gaussian_log_prob
from utils.policy import (EST_DIM, ActorCritic, EstimatorNet, HistoryBuffer, PolicyCheckpoint, PolicyVariant,
                          PpoConfig, RewardConfig, compute_gae, constant_predictor_mse, estimate_histogram,
                          estimation_reward, estimator_loss, estimator_update, evaluate_estimator,
                          make_policy_input, policy_input_dim, ppo_update, surrogate_grads, train)
from utils.simcore import ACTION_DIM, OBS_DIM, SimConfig
from utils.terrain import uniform_world


def _gae_oracle(rewards, values, dones, gamma, lam, last_value):
    steps, n = rewards.shape
    adv = np.zeros_like(rewards)
    for t in range(steps):
        for j in range(n):
            total, coef = 0.0, 1.0
            for k in range(t, steps):
                nxt = values[k + 1, j] if k + 1 < steps else last_value[j]
                delta = rewards[k, j] + gamma * nxt * (1.0 - dones[k, j]) - values[k, j]
                total += coef * delta
                if dones[k, j]:
                    break
                coef *= gamma * lam
            adv[t, j] = total
    return adv


def test_gae_matches_direct_sum():
    rng = np.random.default_rng(0)
    rewards = rng.standard_normal((12, 3))
    values = rng.standard_normal((12, 3))
    dones = (rng.random((12, 3)) < 0.2).astype(np.float64)
    last = rng.standard_normal(3)
    adv, ret = compute_gae(rewards, values, dones, 0.99, 0.95, last)
    assert np.max(np.abs(adv - _gae_oracle(rewards, values, dones, 0.99, 0.95, last))) < 1e-10
    assert np.allclose(ret, adv + values)


def test_gae_with_zero_lambda_is_the_td_error():
    rewards = np.array([[1.0], [0.5], [-0.2]])
    values = np.array([[0.3], [0.1], [0.4]])
    dones = np.array([[0.0], [1.0], [0.0]])
    adv, _ = compute_gae(rewards, values, dones, 0.9, 0.0, last_value=2.0)
    expected = [1.0 + 0.9 * 0.1 - 0.3, 0.5 - 0.1, -0.2 + 0.9 * 2.0 - 0.4]
    assert adv[:, 0] == pytest.approx(expected)


def test_gae_does_not_bootstrap_past_a_terminal_step():
    rewards = np.array([[0.0], [0.0], [1.0]])
    values = np.array([[0.5], [0.5], [0.5]])
    dones = np.array([[0.0], [0.0], [1.0]])
    adv, ret = compute_gae(rewards, values, dones, 0.99, 0.95, last_value=100.0)
    assert adv[2, 0] == pytest.approx(0.5)
    assert ret[2, 0] == pytest.approx(1.0)
    delta1 = 0.99 * 0.5 - 0.5
    assert adv[1, 0] == pytest.approx(delta1 + 0.99 * 0.95 * 0.5)


def test_clipped_surrogate_has_zero_gradient():
    mean = np.zeros((1, ACTION_DIM))
    log_std = np.zeros(ACTION_DIM)
    actions = np.full((1, ACTION_DIM), 0.3)
    logp = gaussian_log_prob(mean, log_std, actions)
    loss, g_mean, g_log_std, info = surrogate_grads(mean, log_std, actions, logp - math.log(1.5), np.ones(1), 0.2)
    assert loss == pytest.approx(-1.2)
    assert np.all(g_mean == 0.0)
    assert np.all(g_log_std == 0.0)
    assert info["clip_fraction"] == 1.0


def test_unclipped_surrogate_gradient():
    mean = np.zeros((1, ACTION_DIM))
    log_std = np.zeros(ACTION_DIM)
    actions = np.full((1, ACTION_DIM), 0.3)
    logp = gaussian_log_prob(mean, log_std, actions)
    loss, g_mean, _, _ = surrogate_grads(mean, log_std, actions, logp - math.log(1.1), np.ones(1), 0.2)
    assert loss == pytest.approx(-1.1)
    # d(-ratio)/d mean = -ratio * (a - mean) / var
    assert g_mean[0] == pytest.approx(np.full(ACTION_DIM, -1.1 * 0.3))


@pytest.mark.parametrize("clip", [0.0, 1.0, 1.5])
def test_invalid_clip_is_rejected(clip):
    with pytest.raises(ConfigurationError):
        PpoConfig(clip=clip)


def test_variant_parsing_and_input_dims():
    assert PolicyVariant.parse("Active_SE") is PolicyVariant.ACTIVE_SE
    with pytest.raises(ConfigurationError):
        PolicyVariant.parse("oracle")
    assert policy_input_dim("no-se") == OBS_DIM + 3
    assert policy_input_dim("passive-se") == OBS_DIM + 3 + EST_DIM


def test_estimator_shape_and_clamping():
    est = EstimatorNet(25, (128, 128), np.random.default_rng(0))
    assert est.net.sizes == [675, 128, 128, 5]
    out = EstimatorNet.clamp(np.array([[10.0, -1.0, 0.5, -0.5, 0.1], [0.1, 2.0, 0.0, 0.0, 0.0]]))
    assert out[:, 0].tolist() == [3.0, 0.25]
    assert out[:, 1].tolist() == [0.0, 1.0]
    assert out[0, 2:].tolist() == [0.5, -0.5, 0.1]


def test_history_buffer_keeps_oldest_first():
    buf = HistoryBuffer(2, 2)
    for k in range(3):
        buf.push(np.full((2, OBS_DIM), float(k)))
    flat = buf.flat()
    assert flat.shape == (2, 2 * OBS_DIM)
    assert flat[0, 0] == 1.0 and flat[0, -1] == 2.0
    buf.reset(np.array([True, False]))
    assert np.all(buf.flat()[0] == 0.0)
    assert buf.flat()[1, -1] == 2.0


def test_estimation_reward_penalises_error():
    cfg = RewardConfig()
    e = np.array([[1.0, 0.2], [1.0, 0.2]])
    estimate = np.array([[1.0, 0.2, 0, 0, 0], [2.0, 0.2, 0, 0, 0]])
    r = estimation_reward(e, estimate, cfg, 0.02)
    assert r[0] == 0.0
    assert r[1] == pytest.approx(cfg.asmp * 1.0 * 0.02)


def test_training_is_deterministic(two_class_grid, tiny_ppo, tiny_checkpoint):
    again, curves = train("active-se", [two_class_grid], tiny_ppo, sim=SimConfig(), seed=0)
    assert np.array_equal(again.actor_critic.policy.params, tiny_checkpoint.actor_critic.policy.params)
    assert np.array_equal(again.estimator.net.params, tiny_checkpoint.estimator.net.params)
    assert len(curves) == tiny_ppo.iterations
    assert all(math.isfinite(row["task_reward"]) for row in curves)


def test_training_needs_two_friction_values(tiny_ppo):
    with pytest.raises(ConfigurationError, match="two distinct"):
        train("no-se", [uniform_world(1.0, size_m=8.0)], tiny_ppo)


def test_policy_checkpoint_round_trip(tmp_path, tiny_checkpoint):
    path = tiny_checkpoint.save(tmp_path / "policy.tsnn")
    loaded = PolicyCheckpoint.load(path)
    assert loaded.policy_id == "active-se-s0"
    assert loaded.iterations == 2
    x = np.random.default_rng(0).standard_normal((3, loaded.actor_critic.in_dim))
    assert np.array_equal(loaded.actor_critic.policy(x), tiny_checkpoint.actor_critic.policy(x))
    assert np.array_equal(loaded.actor_critic.log_std, tiny_checkpoint.actor_critic.log_std)
    assert loaded.sim == tiny_checkpoint.sim


def test_evaluate_estimator(two_class_grid, tiny_checkpoint):
    result = evaluate_estimator(tiny_checkpoint, [two_class_grid], n_envs=4, steps=40, seed=1)
    assert result.n_samples == len(result.mu_true) > 0
    assert set(np.round(result.mu_true, 6)) <= {0.5, 2.5}
    assert np.all((result.mu_hat >= 0.25) & (result.mu_hat <= 3.0))
    assert math.isfinite(result.mse_mu)
    with pytest.raises(ConfigurationError):
        evaluate_estimator(tiny_checkpoint, [two_class_grid], n_envs=2, steps=5, seed=1)


def test_estimate_histogram_counts():
    rows = estimate_histogram(np.array([0.5, 0.5, 2.5]), np.array([0.5, 5.0, 2.5]), n_bins=11)
    assert len(rows) == 22
    by_mu = {}
    for mu, lo, hi, count in rows:
        by_mu[mu] = by_mu.get(mu, 0) + count
    assert by_mu == {0.5: 2, 2.5: 1}
    last = [r for r in rows if r[0] == 0.5][-1]
    assert last[3] == 1


def test_constant_predictor_on_uniform_friction():
    assert constant_predictor_mse(np.linspace(0.25, 3.0, 200_001)) == pytest.approx(2.75 ** 2 / 12, abs=1e-4)
    assert constant_predictor_mse([1.2, 1.2]) == 0.0


def test_estimator_loss_vanishes_on_exact_outputs():
    targets = np.array([[0.5, 0.1, 0.2, -0.3], [2.5, 0.3, 0.0, 0.1]])
    outputs = np.concatenate([targets, np.zeros((2, 1))], axis=1)
    losses, grad = estimator_loss(outputs, targets)
    assert losses["total"] == 0.0
    assert np.all(grad == 0.0)


def _synthetic_batch(ac, in_dim, rng, size=64):
    obs = rng.standard_normal((size, in_dim))
    mean = np.asarray(ac.policy(obs), dtype=np.float64)
    actions = mean + np.exp(ac.log_std) * rng.standard_normal(mean.shape)
    return {"obs": obs, "actions": actions, "logp": gaussian_log_prob(mean, ac.log_std, actions),
            "advantages": rng.standard_normal(size), "returns": rng.standard_normal(size)}


def _optimisers(ac, lr):
    return {"policy": AdamState.like(ac.policy.params, lr), "log_std": AdamState.like(ac.log_std, lr),
            "value": AdamState.like(ac.value.params, lr)}


def _surrogate(ac, batch, clip):
    adv = batch["advantages"]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    mean = np.asarray(ac.policy(batch["obs"]), dtype=np.float64)
    return surrogate_grads(mean, ac.log_std, batch["actions"], batch["logp"], adv, clip)[0]


def test_ppo_update_lowers_the_surrogate():
    cfg = PpoConfig(policy_hidden=(16, 16), value_hidden=(16, 16), entropy_coef=0.0, lr=3e-3)
    in_dim = policy_input_dim("passive-se")
    ac = ActorCritic.create(in_dim, cfg, np.random.default_rng(0))
    batch = _synthetic_batch(ac, in_dim, np.random.default_rng(1))
    before = _surrogate(ac, batch, cfg.clip)
    stats = ppo_update(batch, ac, cfg, _optimisers(ac, cfg.lr), np.random.default_rng(2))
    assert math.isfinite(stats["policy_loss"])
    assert _surrogate(ac, batch, cfg.clip) < before


def test_policy_and_estimator_updates_stay_separate():
    rng = np.random.default_rng(3)
    cfg = PpoConfig(policy_hidden=(16, 16), value_hidden=(16, 16))
    est = EstimatorNet(5, (16, 16), rng)
    histories = rng.standard_normal((64, 5 * OBS_DIM))
    estimate = est.predict(histories)
    obs = make_policy_input("passive-se", rng.standard_normal((64, OBS_DIM)), rng.standard_normal((64, 3)),
                            estimate)

    live = ActorCritic.create(obs.shape[1], cfg, np.random.default_rng(4))
    frozen = ActorCritic.create(obs.shape[1], cfg, np.random.default_rng(4))
    batch = _synthetic_batch(live, obs.shape[1], np.random.default_rng(5))
    batch["obs"] = obs
    const_batch = {**batch, "obs": np.array(obs, copy=True)}
    est_before = est.net.params.copy()
    ppo_update(batch, live, cfg, _optimisers(live, cfg.lr), np.random.default_rng(6))
    ppo_update(const_batch, frozen, cfg, _optimisers(frozen, cfg.lr), np.random.default_rng(6))
    assert np.array_equal(live.policy.params, frozen.policy.params)
    assert np.array_equal(est.net.params, est_before)

    policy_before = live.policy.params.copy()
    targets = np.concatenate([rng.uniform(0.25, 3.0, (64, 1)), rng.uniform(0.0, 1.0, (64, 1)),
                              rng.standard_normal((64, 2))], axis=1)
    estimator_update(est, histories, targets, AdamState.like(est.net.params, 1e-3), rng, epochs=1)
    assert not np.array_equal(est.net.params, est_before)
    assert np.array_equal(live.policy.params, policy_before)
