"""PPO training of locomotion policies with a concurrently trained terrain estimator.

Three variants share one trainer:

* ``no-se``      policy sees observation + command; estimator trained alongside but unused
* ``passive-se`` policy also sees the estimator output (as a constant input)
* ``active-se``  as passive-se, plus a reward on estimation accuracy
"""

import logging
import math
from dataclasses import dataclass, fields
from enum import Enum

import numpy as np

from utils.errors import ConfigurationError, ContractViolation
from utils.nn import (AdamState, Mlp, RewardNormalizer, adam_step, adam_step_net, backward,
                      clip_by_global_norm, forward, gaussian_entropy, gaussian_log_prob,
                      gaussian_log_prob_grads, json_record, load_checkpoint, read_json_record,
                      save_checkpoint)
from utils.noise import derive_seed
from utils.settings import PPO_DEFAULTS, REWARD_DEFAULTS
from utils.simcore import (ACTION_DIM, OBS_DIM, OBS_OMEGA, OperatingMode, SimConfig, VecEnv, foot_velocities,
                           rotate, stance_mask)
from utils.terrain import MU_LIMITS, ROUGH_LIMITS, distinct_mu_count

logger = logging.getLogger(__name__)

EST_DIM = 5
CMD_DIM = 3
# estimator displacement outputs are in units of dt * 1 m/s
DX_UNIT_SPEED = 1.0


class PolicyVariant(str, Enum):
    NO_SE = "no-se"
    PASSIVE_SE = "passive-se"
    ACTIVE_SE = "active-se"

    @classmethod
    def parse(cls, text):
        key = str(text).strip().lower().replace("_", "-")
        for member in cls:
            if member.value == key:
                return member
        raise ConfigurationError(f"Unknown policy variant '{text}' (expected one of "
                                 f"{', '.join(m.value for m in cls)}).")

    @property
    def uses_estimate(self):
        return self is not PolicyVariant.NO_SE

    @property
    def estimation_reward(self):
        return self is PolicyVariant.ACTIVE_SE


class _FromDict:
    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (data or {}).items() if k in names})

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class RewardConfig(_FromDict):
    vel_xy: float = REWARD_DEFAULTS["vel_xy"]
    vel_yaw: float = REWARD_DEFAULTS["vel_yaw"]
    swing_force: float = REWARD_DEFAULTS["swing_force"]
    stance_slip: float = REWARD_DEFAULTS["stance_slip"]
    force_magnitude: float = REWARD_DEFAULTS["force_magnitude"]
    action_rate: float = REWARD_DEFAULTS["action_rate"]
    action_curvature: float = REWARD_DEFAULTS["action_curvature"]
    asmp: float = REWARD_DEFAULTS["asmp"]
    sigma_vxy: float = REWARD_DEFAULTS["sigma_vxy"]
    sigma_wz: float = REWARD_DEFAULTS["sigma_wz"]
    delta_cf: float = REWARD_DEFAULTS["delta_cf"]
    delta_cv: float = REWARD_DEFAULTS["delta_cv"]
    scale_by_dt: bool = REWARD_DEFAULTS["scale_by_dt"]

    def __post_init__(self):
        for name in ("sigma_vxy", "sigma_wz", "delta_cf", "delta_cv"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"[reward] {name} must be positive.")


@dataclass(frozen=True)
class PpoConfig(_FromDict):
    gamma: float = PPO_DEFAULTS["gamma"]
    gae_lambda: float = PPO_DEFAULTS["gae_lambda"]
    steps_per_rollout: int = PPO_DEFAULTS["steps_per_rollout"]
    epochs: int = PPO_DEFAULTS["epochs"]
    minibatches: int = PPO_DEFAULTS["minibatches"]
    entropy_coef: float = PPO_DEFAULTS["entropy_coef"]
    value_coef: float = PPO_DEFAULTS["value_coef"]
    clip: float = PPO_DEFAULTS["clip"]
    lr: float = PPO_DEFAULTS["lr"]
    normalize_rewards: bool = PPO_DEFAULTS["normalize_rewards"]
    num_envs: int = PPO_DEFAULTS["num_envs"]
    iterations: int = PPO_DEFAULTS["iterations"]
    max_grad_norm: float = PPO_DEFAULTS["max_grad_norm"]
    init_std: float = PPO_DEFAULTS["init_std"]
    policy_hidden: tuple = tuple(PPO_DEFAULTS["policy_hidden"])
    value_hidden: tuple = tuple(PPO_DEFAULTS["value_hidden"])
    estimator_hidden: tuple = tuple(PPO_DEFAULTS["estimator_hidden"])
    history_len: int = PPO_DEFAULTS["history_len"]
    estimator_lr: float = PPO_DEFAULTS["estimator_lr"]
    log_every: int = PPO_DEFAULTS["log_every"]

    def __post_init__(self):
        for name in ("policy_hidden", "value_hidden", "estimator_hidden"):
            object.__setattr__(self, name, tuple(int(x) for x in getattr(self, name)))
        for name in ("gamma", "steps_per_rollout", "epochs", "minibatches", "value_coef", "lr", "num_envs",
                     "iterations", "max_grad_norm", "init_std", "history_len", "estimator_lr"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"[ppo] {name} must be positive, got {getattr(self, name)!r}.")
        if not 0.0 < self.clip < 1.0:
            raise ConfigurationError(f"[ppo] clip must lie in (0, 1), got {self.clip!r}.")
        if not 0.0 <= self.gae_lambda <= 1.0 or self.gamma > 1.0:
            raise ConfigurationError("[ppo] gamma must lie in (0, 1] and gae_lambda in [0, 1].")
        if self.entropy_coef < 0:
            raise ConfigurationError("[ppo] entropy_coef must be non-negative.")
        if self.num_envs * self.steps_per_rollout < self.minibatches:
            raise ConfigurationError("[ppo] rollout batch is smaller than the minibatch count.")


# -- advantage estimation ----------------------------------------------------------

def compute_gae(rewards, values, dones, gamma, lam, last_value=0.0):
    """GAE(lambda) over time axis 0; returns (advantages, returns).

    dones[t] marks that the episode ended with step t, so values[t + 1]
    (or last_value) is not bootstrapped across it.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ContractViolation(f"GAE inputs differ in shape: rewards {rewards.shape}, "
                                f"values {values.shape}, dones {dones.shape}.")
    advantages = np.zeros_like(rewards)
    gae = np.zeros(rewards.shape[1:])
    next_value = np.asarray(last_value, dtype=np.float64) * np.ones(rewards.shape[1:])
    for t in range(rewards.shape[0] - 1, -1, -1):
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * alive - values[t]
        gae = delta + gamma * lam * alive * gae
        advantages[t] = gae
        next_value = values[t]
    return advantages, advantages + values


# -- networks ---------------------------------------------------------------------

def policy_input_dim(variant):
    return OBS_DIM + CMD_DIM + (EST_DIM if PolicyVariant(variant).uses_estimate else 0)


def make_policy_input(variant, obs, commands, estimate):
    parts = [obs, commands]
    if PolicyVariant(variant).uses_estimate:
        parts.append(estimate)
    return np.concatenate(parts, axis=1)


class EstimatorNet:
    """History of H observations -> (mu, roughness, dx, dy, aux)."""

    def __init__(self, history_len=25, hidden=(128, 128), rng=None, dtype=np.float32, net=None):
        self.history_len = int(history_len)
        self.net = net or Mlp([self.history_len * OBS_DIM, *hidden, EST_DIM], "relu", dtype, rng)
        if self.net.in_dim != self.history_len * OBS_DIM or self.net.out_dim != EST_DIM:
            raise ContractViolation("Estimator network does not match the history length.")

    def raw(self, histories):
        return np.asarray(self.net(histories), dtype=np.float64)

    @staticmethod
    def clamp(outputs):
        out = np.array(outputs, dtype=np.float64)
        out[..., 0] = np.clip(out[..., 0], *MU_LIMITS)
        out[..., 1] = np.clip(out[..., 1], *ROUGH_LIMITS)
        return out

    def predict(self, histories):
        return self.clamp(self.raw(histories))


class HistoryBuffer:
    """Per-env ring of the last H observations, oldest first, zero-padded after reset."""

    def __init__(self, n_envs, history_len):
        self.data = np.zeros((n_envs, history_len, OBS_DIM), dtype=np.float64)

    def reset(self, mask=None):
        if mask is None:
            self.data[...] = 0.0
        else:
            self.data[mask] = 0.0

    def push(self, obs, mask=None):
        if mask is None:
            self.data[:, :-1] = self.data[:, 1:]
            self.data[:, -1] = obs
        else:
            idx = np.flatnonzero(mask)
            self.data[idx, :-1] = self.data[idx, 1:]
            self.data[idx, -1] = obs

    def flat(self, mask=None):
        d = self.data if mask is None else self.data[mask]
        return d.reshape(d.shape[0], -1)


def estimator_targets(e, dx, dt):
    return np.concatenate([e, np.asarray(dx) / (dt * DX_UNIT_SPEED)], axis=1)


def estimator_loss(outputs, targets):
    """Per-output MSE and gradient. Targets are (mu, r, dx, dy); the aux
    output is regressed onto the (detached) squared error of its own mu."""
    outputs = np.asarray(outputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    aux_target = (outputs[:, 0] - targets[:, 0]) ** 2
    full = np.concatenate([targets, aux_target[:, None]], axis=1)
    diff = outputs - full
    n = outputs.shape[0]
    losses = {
        "mu": float(np.mean(diff[:, 0] ** 2)),
        "rough": float(np.mean(diff[:, 1] ** 2)),
        "dx": float(np.mean(np.sum(diff[:, 2:4] ** 2, axis=1))),
        "aux": float(np.mean(diff[:, 4] ** 2)),
    }
    losses["total"] = losses["mu"] + losses["rough"] + losses["dx"] + losses["aux"]
    return losses, 2.0 * diff / n


def estimator_update(estimator, histories, targets, adam, rng, epochs=5, minibatches=4):
    """Supervised regression step; touches only estimator parameters."""
    n = histories.shape[0]
    if targets.shape[0] != n:
        raise ContractViolation("Estimator histories and targets are misaligned.")
    size = max(1, n // minibatches)
    totals = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        totals = []
        for k in range(minibatches):
            idx = perm[k * size:(k + 1) * size]
            if len(idx) == 0:
                continue
            out, cache = forward(estimator.net, histories[idx])
            losses, grad = estimator_loss(out, targets[idx])
            if not math.isfinite(losses["total"]):
                raise ContractViolation(f"Non-finite estimator loss: {losses}")
            g, _ = backward(estimator.net, cache, grad)
            adam_step_net(estimator.net, g, adam)
            totals.append(losses)
    return {k: float(np.mean([t[k] for t in totals])) for k in totals[0]} if totals else {}


class ActorCritic:
    def __init__(self, policy, value, log_std):
        self.policy = policy
        self.value = value
        self.log_std = np.array(log_std, dtype=np.float64)

    @classmethod
    def create(cls, in_dim, ppo, rng=None, dtype=np.float32):
        policy = Mlp([in_dim, *ppo.policy_hidden, ACTION_DIM], "tanh", dtype, rng, output_gain=0.01)
        value = Mlp([in_dim, *ppo.value_hidden, 1], "tanh", dtype, rng, output_gain=1.0)
        return cls(policy, value, np.full(ACTION_DIM, math.log(ppo.init_std)))

    @property
    def in_dim(self):
        return self.policy.in_dim


def surrogate_grads(mean, log_std, actions, logp_old, advantages, clip):
    """Clipped surrogate loss (to minimise) and its gradients w.r.t. mean and log_std."""
    mean = np.asarray(mean, dtype=np.float64)
    logp = gaussian_log_prob(mean, log_std, actions)
    ratio = np.exp(logp - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantages
    loss = -float(np.mean(np.minimum(unclipped, clipped)))
    # the clipped branch is constant in the parameters
    coef = np.where(unclipped <= clipped, unclipped, 0.0)
    d_logp = -coef / len(advantages)
    g_mean_lp, g_std_lp = gaussian_log_prob_grads(mean, log_std, actions)
    info = {
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip)),
        "approx_kl": float(np.mean(logp_old - logp)),
        "ratio_max": float(np.max(ratio)) if ratio.size else 1.0,
    }
    return loss, d_logp[:, None] * g_mean_lp, np.sum(d_logp[:, None] * g_std_lp, axis=0), info


def ppo_update(batch, ac, cfg, optim, rng):
    """PPO epochs over a rollout batch.

    batch: dict of obs (B, in), actions (B, 8), logp (B,), advantages (B,),
    returns (B,). optim: dict of AdamState for "policy", "log_std", "value".
    """
    obs = batch["obs"]
    actions = batch["actions"]
    logp_old = batch["logp"]
    returns = batch["returns"]
    adv = batch["advantages"]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n = obs.shape[0]
    size = n // cfg.minibatches
    stats = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for k in range(cfg.minibatches):
            idx = perm[k * size:(k + 1) * size]
            mean, p_cache = forward(ac.policy, obs[idx])
            value, v_cache = forward(ac.value, obs[idx])
            value = value[:, 0].astype(np.float64)
            pi_loss, g_mean, g_log_std, info = surrogate_grads(mean, ac.log_std, actions[idx], logp_old[idx],
                                                               adv[idx], cfg.clip)
            v_loss = float(np.mean((value - returns[idx]) ** 2))
            entropy = gaussian_entropy(ac.log_std)
            loss = pi_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy
            if not math.isfinite(loss):
                raise ContractViolation(
                    f"Non-finite PPO loss (policy {pi_loss!r}, value {v_loss!r}, entropy {entropy!r}, "
                    f"max ratio {info['ratio_max']!r}, log_std {ac.log_std.tolist()}).")
            g_log_std = g_log_std - cfg.entropy_coef
            g_value = (2.0 * cfg.value_coef * (value - returns[idx]) / len(idx))[:, None]
            g_policy, _ = backward(ac.policy, p_cache, g_mean)
            g_val, _ = backward(ac.value, v_cache, g_value)
            (g_policy, g_log_std, g_val), norm = clip_by_global_norm([g_policy, g_log_std, g_val],
                                                                     cfg.max_grad_norm)
            adam_step_net(ac.policy, g_policy.astype(ac.policy.dtype), optim["policy"])
            adam_step(ac.log_std, g_log_std, optim["log_std"])
            adam_step_net(ac.value, g_val.astype(ac.value.dtype), optim["value"])
            stats.append({"policy_loss": pi_loss, "value_loss": v_loss, "entropy": entropy,
                          "grad_norm": norm, **info})
    return {key: float(np.mean([s[key] for s in stats])) for key in stats[0]}


# -- rewards ------------------------------------------------------------------------

def reward_terms(v, omega, commands, actions, v_foot, stance, contact, prev_action, prev_prev_action, sim):
    """Raw (unweighted) reward terms per env."""
    u = actions.reshape(-1, 4, 2)
    swing = ~stance
    # swing feet carry no load; their would-be traction stands in for swing-phase force
    swing_force_sq = np.sum((sim.traction_gain * (u - v_foot)) ** 2, axis=2)
    slip_sq = np.sum(contact.slip ** 2, axis=2)
    return {
        "vel_xy": np.sum((v - commands[:, :2]) ** 2, axis=1),
        "vel_yaw": (omega - commands[:, 2]) ** 2,
        "swing_force_sq": swing_force_sq * swing,
        "slip_sq": slip_sq * stance,
        "force_magnitude": contact.force_sq(),
        "action_rate": np.sum((prev_action - actions) ** 2, axis=1),
        "action_curvature": np.sum((prev_prev_action - 2.0 * prev_action + actions) ** 2, axis=1),
    }


def task_reward(terms, cfg, dt):
    """Weighted task reward and the velocity-tracking component."""
    vel = np.exp(-terms["vel_xy"] / cfg.sigma_vxy)
    yaw = np.exp(-terms["vel_yaw"] / cfg.sigma_wz)
    swing = np.sum(1.0 - np.exp(-cfg.delta_cf * terms["swing_force_sq"]), axis=1)
    slip = np.sum(1.0 - np.exp(-cfg.delta_cv * terms["slip_sq"]), axis=1)
    total = (cfg.vel_xy * vel + cfg.vel_yaw * yaw + cfg.swing_force * swing + cfg.stance_slip * slip
             + cfg.force_magnitude * terms["force_magnitude"] + cfg.action_rate * terms["action_rate"]
             + cfg.action_curvature * terms["action_curvature"])
    scale = dt if cfg.scale_by_dt else 1.0
    return total * scale, vel


def estimation_reward(e, estimate, cfg, dt):
    err = np.sum((np.asarray(e) - np.asarray(estimate)[:, :2]) ** 2, axis=1)
    return cfg.asmp * err * (dt if cfg.scale_by_dt else 1.0)


# -- checkpoint ---------------------------------------------------------------------

@dataclass
class PolicyCheckpoint:
    variant: PolicyVariant
    actor_critic: ActorCritic
    estimator: EstimatorNet
    sim: SimConfig
    seed: int = 0
    iterations: int = 0

    @property
    def policy_id(self):
        return f"{self.variant.value}-s{self.seed}"

    def save(self, path):
        meta = {"variant": self.variant.value, "history_len": self.estimator.history_len,
                "sim": self.sim.to_dict(), "seed": self.seed, "iterations": self.iterations}
        return save_checkpoint(path, {
            "policy": self.actor_critic.policy,
            "value": self.actor_critic.value,
            "log_std": self.actor_critic.log_std,
            "estimator": self.estimator.net,
            "meta": json_record(meta),
        })

    @classmethod
    def load(cls, path):
        records = load_checkpoint(path)
        try:
            meta = read_json_record(records["meta"])
            policy, value, log_std, est = (records[k] for k in ("policy", "value", "log_std", "estimator"))
        except KeyError as exc:
            raise ContractViolation(f"Policy checkpoint {path} lacks record {exc}.") from exc
        ac = ActorCritic(policy, value, log_std)
        return cls(PolicyVariant.parse(meta["variant"]), ac, EstimatorNet(meta["history_len"], net=est),
                   SimConfig.from_dict(meta["sim"]), int(meta["seed"]), int(meta.get("iterations", 0)))


# -- training -----------------------------------------------------------------------

CURVE_COLUMNS = ("iteration", "task_reward", "est_mse_mu", "est_mse_rough", "energy", "vel_tracking")


def train(variant, grids, ppo=None, reward=None, sim=None, seed=0, mode=None, progress=None):
    """Trains one policy variant; returns (PolicyCheckpoint, curve rows)."""
    variant = PolicyVariant.parse(variant) if not isinstance(variant, PolicyVariant) else variant
    ppo = ppo or PpoConfig()
    reward = reward or RewardConfig()
    sim = sim or SimConfig()
    mode = mode or OperatingMode.free()
    if distinct_mu_count(grids) < 2:
        raise ConfigurationError("Training worlds must contain at least two distinct friction values.")

    n, steps = ppo.num_envs, ppo.steps_per_rollout
    init_rng = np.random.default_rng(derive_seed(seed, 1))
    act_rng = np.random.default_rng(derive_seed(seed, 2))
    venv = VecEnv(grids, mode, n, derive_seed(seed, 3), cfg=sim)
    in_dim = policy_input_dim(variant)
    ac = ActorCritic.create(in_dim, ppo, init_rng)
    est = EstimatorNet(ppo.history_len, ppo.estimator_hidden, init_rng)
    optim = {"policy": AdamState.like(ac.policy.params, ppo.lr),
             "log_std": AdamState.like(ac.log_std, ppo.lr),
             "value": AdamState.like(ac.value.params, ppo.lr)}
    est_optim = AdamState.like(est.net.params, ppo.estimator_lr)
    normalizer = RewardNormalizer(n, ppo.gamma) if ppo.normalize_rewards else None

    obs = venv.reset()
    hist = HistoryBuffer(n, ppo.history_len)
    hist.push(obs)
    estimate = est.predict(hist.flat())
    prev_a = np.zeros((n, ACTION_DIM))
    prev_prev_a = np.zeros((n, ACTION_DIM))
    offsets = sim.foot_offsets
    curves = []
    faults_seen = 0
    logger.info("[PPO] Training %s (seed %d): %d envs x %d steps, %d iterations.",
                variant.value, seed, n, steps, ppo.iterations)

    for it in range(1, ppo.iterations + 1):
        buf_in = np.zeros((steps, n, in_dim))
        buf_act = np.zeros((steps, n, ACTION_DIM))
        buf_logp = np.zeros((steps, n))
        buf_val = np.zeros((steps, n))
        buf_rew = np.zeros((steps, n))
        buf_done = np.zeros((steps, n))
        est_hist = np.zeros((steps, n, ppo.history_len * OBS_DIM), dtype=np.float32)
        est_tgt = np.zeros((steps, n, 4))
        est_valid = np.zeros((steps, n), dtype=bool)
        task_sum = vel_sum = energy_sum = 0.0
        err_mu = err_rough = 0.0

        for t in range(steps):
            commands = venv.commands.copy()
            pin = make_policy_input(variant, obs, commands, estimate)
            mean = np.asarray(ac.policy(pin), dtype=np.float64)
            value = np.asarray(ac.value(pin), dtype=np.float64)[:, 0]
            action = mean + np.exp(ac.log_std) * act_rng.standard_normal((n, ACTION_DIM))
            logp = gaussian_log_prob(mean, ac.log_std, action)
            next_obs, contact, dones, info = venv.step(action)
            applied = np.clip(action, -sim.action_limit, sim.action_limit)

            prev = info["prev_state"]
            v_foot = foot_velocities(prev.v, prev.omega, offsets)
            terms = reward_terms(info["v"], info["omega"], commands, applied, v_foot, stance_mask(prev.gait_phase),
                                 contact, prev_a, prev_prev_a, sim)
            r_task, vel = task_reward(terms, reward, sim.dt)

            hist.push(info["terminal_obs"])
            flat = hist.flat()
            post = est.predict(flat)
            r_total = r_task.copy()
            if variant.estimation_reward:
                r_total += estimation_reward(info["e"], post, reward, sim.dt)
            fault = info["fault"]
            if fault.any():
                faults_seen += int(fault.sum())
                r_total[fault] = 0.0
            r = normalizer(r_total, dones) if normalizer else r_total
            timeout = info["timeout"]
            if timeout.any():
                term_in = make_policy_input(variant, info["terminal_obs"][timeout], commands[timeout], post[timeout])
                r[timeout] += ppo.gamma * np.asarray(ac.value(term_in), dtype=np.float64)[:, 0]

            buf_in[t], buf_act[t], buf_logp[t], buf_val[t] = pin, action, logp, value
            buf_rew[t], buf_done[t] = r, dones
            est_hist[t] = flat
            est_tgt[t] = estimator_targets(info["e"], info["dx"], sim.dt)
            est_valid[t] = ~fault
            task_sum += float(r_task.mean())
            vel_sum += float(vel.mean())
            energy_sum += float(contact.force_sq().mean())
            err_mu += float(np.mean((post[:, 0] - info["e"][:, 0]) ** 2))
            err_rough += float(np.mean((post[:, 1] - info["e"][:, 1]) ** 2))

            prev_prev_a, prev_a = prev_a, applied
            estimate = post
            if dones.any():
                hist.reset(dones)
                hist.push(next_obs[dones], dones)
                estimate[dones] = est.predict(hist.flat(dones))
                prev_a[dones] = 0.0
                prev_prev_a[dones] = 0.0
            obs = next_obs

        last_in = make_policy_input(variant, obs, venv.commands, estimate)
        last_value = np.asarray(ac.value(last_in), dtype=np.float64)[:, 0]
        adv, ret = compute_gae(buf_rew, buf_val, buf_done, ppo.gamma, ppo.gae_lambda, last_value)
        batch = {"obs": buf_in.reshape(steps * n, -1), "actions": buf_act.reshape(steps * n, -1),
                 "logp": buf_logp.reshape(-1), "advantages": adv.reshape(-1), "returns": ret.reshape(-1)}
        stats = ppo_update(batch, ac, ppo, optim, act_rng)
        valid = est_valid.reshape(-1)
        est_stats = estimator_update(est, est_hist.reshape(steps * n, -1)[valid], est_tgt.reshape(steps * n, -1)[valid],
                                     est_optim, act_rng, ppo.epochs, ppo.minibatches)
        # the policy input changed with the estimator; refresh it
        estimate = est.predict(hist.flat())

        row = {"iteration": it, "task_reward": task_sum / steps, "est_mse_mu": err_mu / steps,
               "est_mse_rough": err_rough / steps, "energy": energy_sum / steps, "vel_tracking": vel_sum / steps}
        curves.append(row)
        if it == 1 or it % ppo.log_every == 0 or it == ppo.iterations:
            logger.info("[PPO] %s it %d/%d task_reward=%.4f est_mse_mu=%.4f energy=%.1f vel=%.3f kl=%.4f",
                        variant.value, it, ppo.iterations, row["task_reward"], row["est_mse_mu"], row["energy"],
                        row["vel_tracking"], stats["approx_kl"])
            logger.debug("[EST] it %d losses %s", it, est_stats)
        if progress:
            progress(row)

    if faults_seen:
        logger.warning("[PPO] %d simulation fault(s) skipped during training.", faults_seen)
    ckpt = PolicyCheckpoint(variant, ac, est, sim, int(seed), ppo.iterations)
    return ckpt, curves


# -- inference ----------------------------------------------------------------------

class PolicyRunner:
    """Deterministic (mean-action) controller for a VecEnv.

    Keeps each env's observation history, the latest clamped estimate and a
    proprioceptive odometry pose integrated from estimated displacements and
    the measured yaw rate.
    """

    def __init__(self, checkpoint, n_envs):
        self.ckpt = checkpoint
        self.variant = checkpoint.variant
        self.dt = checkpoint.sim.dt
        self.hist = HistoryBuffer(n_envs, checkpoint.estimator.history_len)
        self.estimate = np.zeros((n_envs, EST_DIM))
        self.pose_hat = np.zeros((n_envs, 3))

    def reset(self, venv, mask=None):
        mask = np.ones(venv.n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        self.hist.reset(mask)
        self.hist.push(venv.obs[mask], mask)
        self.estimate[mask] = self.ckpt.estimator.predict(self.hist.flat(mask))
        self.pose_hat[mask, :2] = venv.state.p[mask]
        self.pose_hat[mask, 2] = venv.state.psi[mask]

    def act(self, venv):
        pin = make_policy_input(self.variant, venv.obs, venv.commands, self.estimate)
        return np.asarray(self.ckpt.actor_critic.policy(pin), dtype=np.float64)

    def observe(self, venv, info, dones):
        """Folds a step's terminal observations in; returns (raw estimate, estimated pose) before any reset."""
        self.hist.push(info["terminal_obs"])
        raw = self.ckpt.estimator.raw(self.hist.flat())
        self.estimate = self.ckpt.estimator.clamp(raw)
        dx_hat = raw[:, 2:4] * self.dt * DX_UNIT_SPEED
        self.pose_hat[:, :2] += rotate(dx_hat, self.pose_hat[:, 2])
        self.pose_hat[:, 2] += info["terminal_obs"][:, OBS_OMEGA][:, 0] * self.dt
        out = (self.estimate.copy(), self.pose_hat.copy())
        if np.any(dones):
            self.reset(venv, dones)
        return out

    def step(self, venv):
        """Acts, steps and observes; returns (action, contact, dones, info, estimate, pose_hat)."""
        action = self.act(venv)
        _, contact, dones, info = venv.step(action)
        estimate, pose_hat = self.observe(venv, info, dones)
        return action, contact, dones, info, estimate, pose_hat


@dataclass
class EstimatorEval:
    mse_mu: float
    mse_rough: float
    baseline_mu: float
    baseline_rough: float
    vel_tracking: float
    energy: float
    slip_fraction: float
    n_samples: int
    mu_true: np.ndarray
    mu_hat: np.ndarray

    def row(self):
        return [self.mse_mu, self.mse_rough, self.baseline_mu, self.baseline_rough, self.vel_tracking,
                self.energy, self.slip_fraction, self.n_samples]


EVAL_COLUMNS = ("mse_mu", "mse_rough", "baseline_mu", "baseline_rough", "vel_tracking", "energy",
                "slip_fraction", "n_samples")


def constant_predictor_mse(values):
    """MSE of always predicting the mean, i.e. the variance of `values`."""
    values = np.asarray(values, dtype=np.float64)
    return float(np.mean((values - values.mean()) ** 2)) if values.size else float("nan")


def evaluate_estimator(checkpoint, grids, n_envs=32, steps=500, seed=0, reward=None):
    """Held-out estimation error of a trained policy's estimator on fresh episodes.

    The first H steps of each episode are skipped so histories are full.
    """
    reward = reward or RewardConfig()
    sim = checkpoint.sim
    venv = VecEnv(grids, OperatingMode.free(), n_envs, derive_seed(seed, 11), cfg=sim)
    venv.reset()
    runner = PolicyRunner(checkpoint, n_envs)
    runner.reset(venv)
    warm = checkpoint.estimator.history_len
    since_reset = np.zeros(n_envs, dtype=np.int64)
    mu_true, mu_hat, r_true, r_hat = [], [], [], []
    vel_sum = energy_sum = 0.0
    sat = stance = 0
    for _ in range(steps):
        commands = venv.commands.copy()
        _, contact, dones, info, estimate, _ = runner.step(venv)
        since_reset += 1
        keep = (since_reset >= warm) & ~info["fault"]
        mu_true.append(info["e"][keep, 0])
        r_true.append(info["e"][keep, 1])
        mu_hat.append(estimate[keep, 0])
        r_hat.append(estimate[keep, 1])
        vel_sum += float(np.mean(np.exp(-np.sum((info["v"] - commands[:, :2]) ** 2, axis=1) / reward.sigma_vxy)))
        energy_sum += float(contact.force_sq().mean())
        sat += int(contact.saturated.sum())
        stance += int(contact.stance.sum())
        since_reset[dones] = 0
    mu_true, mu_hat = np.concatenate(mu_true), np.concatenate(mu_hat)
    r_true, r_hat = np.concatenate(r_true), np.concatenate(r_hat)
    if mu_true.size == 0:
        raise ConfigurationError(f"Evaluation produced no samples; raise steps above the history length {warm}.")
    result = EstimatorEval(
        mse_mu=float(np.mean((mu_hat - mu_true) ** 2)),
        mse_rough=float(np.mean((r_hat - r_true) ** 2)),
        baseline_mu=constant_predictor_mse(mu_true),
        baseline_rough=constant_predictor_mse(r_true),
        vel_tracking=vel_sum / steps,
        energy=energy_sum / steps,
        slip_fraction=sat / max(stance, 1),
        n_samples=int(mu_true.size),
        mu_true=mu_true,
        mu_hat=mu_hat,
    )
    logger.info("[EST] %s: mse_mu=%.4f (baseline %.4f) mse_rough=%.4f energy=%.1f",
                checkpoint.policy_id, result.mse_mu, result.baseline_mu, result.mse_rough, result.energy)
    return result


def estimate_histogram(mu_true, mu_hat, n_bins=22, lo=MU_LIMITS[0], hi=MU_LIMITS[1]):
    """Counts of estimates per bin, grouped by distinct true friction."""
    edges = np.linspace(lo, hi, n_bins + 1)
    rows = []
    keys = np.round(np.asarray(mu_true), 6)
    for value in np.unique(keys):
        counts, _ = np.histogram(np.clip(mu_hat[keys == value], lo, hi), bins=edges)
        for b in range(n_bins):
            rows.append([float(value), float(edges[b]), float(edges[b + 1]), int(counts[b])])
    return rows
