"""Planar four-foot friction-cone surrogate of a trotting quadruped.

Arrays are batched over robots (leading axis N). Feet are ordered FL, FR,
RL, RR; diagonal pairs {FL, RR} and {FR, RL} alternate stance on a fixed trot
clock. Per-foot commanded tangential velocities are turned into traction
forces, projected onto the friction cone, and integrated together with body
damping, roughness disturbances and (optionally) a dragged payload.
"""

import logging
import math
from dataclasses import dataclass, fields

import numpy as np

from utils.errors import ConfigurationError, SimulationFault
from utils.noise import derive_seed
from utils.settings import SIM_DEFAULTS
from utils.terrain import check_world_size

logger = logging.getLogger(__name__)

N_FEET = 4
ACTION_DIM = 2 * N_FEET
OBS_DIM = 27

# observation layout
OBS_V = slice(0, 2)
OBS_OMEGA = slice(2, 3)
OBS_ACCEL = slice(3, 5)
OBS_PHASE = slice(5, 7)
OBS_ACTION = slice(7, 15)
OBS_SLIP = slice(15, 23)
OBS_STANCE = slice(23, 27)
MEASURED_CHANNELS = np.r_[0:5, 15:23]
N_MEASURED = len(MEASURED_CHANNELS)
N_ROUGH_NOISE = 2 * N_FEET
# normals drawn per env per step: roughness (8) then observation noise (13)
NOISE_PER_STEP = N_ROUGH_NOISE + N_MEASURED

# stance for phase in [0, 0.5): FL + RR, phase in [0.5, 1): FR + RL
_FIRST_HALF_STANCE = np.array([True, False, False, True])


@dataclass(frozen=True)
class SimConfig:
    dt: float = SIM_DEFAULTS["dt"]
    mass_kg: float = SIM_DEFAULTS["mass_kg"]
    gravity: float = SIM_DEFAULTS["gravity"]
    traction_gain: float = SIM_DEFAULTS["traction_gain"]
    body_damping: float = SIM_DEFAULTS["body_damping"]
    yaw_inertia: float = SIM_DEFAULTS["yaw_inertia"]
    yaw_damping: float = SIM_DEFAULTS["yaw_damping"]
    roughness_force_scale: float = SIM_DEFAULTS["roughness_force_scale"]
    gait_freq_hz: float = SIM_DEFAULTS["gait_freq_hz"]
    obs_noise_std: float = SIM_DEFAULTS["obs_noise_std"]
    action_limit: float = SIM_DEFAULTS["action_limit"]
    payload_mass_kg: float = SIM_DEFAULTS["payload_mass_kg"]
    static_speed_threshold: float = SIM_DEFAULTS["static_speed_threshold"]
    horizon_s: float = SIM_DEFAULTS["horizon_s"]
    spawn_margin_m: float = SIM_DEFAULTS["spawn_margin_m"]
    foot_offset_x: float = SIM_DEFAULTS["foot_offset_x"]
    foot_offset_y: float = SIM_DEFAULTS["foot_offset_y"]
    accel_scale: float = SIM_DEFAULTS["accel_scale"]
    slip_scale: float = SIM_DEFAULTS["slip_scale"]
    cmd_vx_min: float = SIM_DEFAULTS["cmd_vx_min"]
    cmd_vx_max: float = SIM_DEFAULTS["cmd_vx_max"]
    cmd_vy_max: float = SIM_DEFAULTS["cmd_vy_max"]
    cmd_wz_max: float = SIM_DEFAULTS["cmd_wz_max"]

    def __post_init__(self):
        for name in ("dt", "mass_kg", "gravity", "traction_gain", "yaw_inertia", "gait_freq_hz",
                     "action_limit", "horizon_s"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"[sim] {name} must be positive.")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (data or {}).items() if k in names})

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def foot_offsets(self):
        x, y = self.foot_offset_x, self.foot_offset_y
        return np.array([[x, y], [x, -y], [-x, y], [-x, -y]], dtype=np.float64)

    @property
    def horizon_steps(self):
        return int(round(self.horizon_s / self.dt))

    @property
    def stance_load(self):
        # two feet are always in stance on the trot clock
        return self.mass_kg * self.gravity / 2.0


@dataclass(frozen=True)
class OperatingMode:
    kind: str = "free"
    payload_mass_kg: float = 1.0

    def __post_init__(self):
        if self.kind not in ("free", "dragging"):
            raise ConfigurationError(f"Unknown operating mode '{self.kind}'.")
        if self.payload_mass_kg < 0:
            raise ConfigurationError("Payload mass must be non-negative.")

    @classmethod
    def free(cls):
        return cls("free")

    @classmethod
    def dragging(cls, payload_mass_kg=1.0):
        return cls("dragging", float(payload_mass_kg))

    @classmethod
    def parse(cls, text, payload_mass_kg=1.0):
        text = str(text).strip().lower().replace("_", "-")
        if text in ("free", "free-locomotion", "locomotion"):
            return cls.free()
        if text in ("dragging", "payload-dragging", "drag"):
            return cls.dragging(payload_mass_kg)
        raise ConfigurationError(f"Unknown operating mode '{text}'.")

    @property
    def is_dragging(self):
        return self.kind == "dragging"

    @property
    def label(self):
        return self.kind


@dataclass
class RobotState:
    p: np.ndarray          # (N, 2) world position, m
    psi: np.ndarray        # (N,) yaw, rad
    v: np.ndarray          # (N, 2) body-frame velocity, m/s
    omega: np.ndarray      # (N,) yaw rate, rad/s
    gait_phase: np.ndarray  # (N,) in [0, 1)
    step_count: np.ndarray  # (N,) int64

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 2)), np.zeros(n), np.zeros((n, 2)), np.zeros(n), np.zeros(n),
                   np.zeros(n, dtype=np.int64))

    @property
    def size(self):
        return self.p.shape[0]

    def copy(self):
        return RobotState(self.p.copy(), self.psi.copy(), self.v.copy(), self.omega.copy(),
                          self.gait_phase.copy(), self.step_count.copy())

    def rows(self, idx):
        return RobotState(self.p[idx], self.psi[idx], self.v[idx], self.omega[idx],
                          self.gait_phase[idx], self.step_count[idx])

    def assign(self, idx, other):
        self.p[idx] = other.p
        self.psi[idx] = other.psi
        self.v[idx] = other.v
        self.omega[idx] = other.omega
        self.gait_phase[idx] = other.gait_phase
        self.step_count[idx] = other.step_count

    def is_finite(self):
        return (np.isfinite(self.p).all(axis=1) & np.isfinite(self.psi) & np.isfinite(self.v).all(axis=1)
                & np.isfinite(self.omega) & np.isfinite(self.gait_phase))


@dataclass
class ContactResult:
    force: np.ndarray      # (N, 4, 2) realised traction, N
    slip: np.ndarray       # (N, 4, 2) slip velocity, m/s
    stance: np.ndarray     # (N, 4) bool
    saturated: np.ndarray  # (N, 4) bool
    desired: np.ndarray    # (N, 4, 2) pre-projection traction, N

    def force_sq(self):
        return np.sum(self.force ** 2, axis=(1, 2))

    def slip_norm(self):
        return np.linalg.norm(self.slip, axis=2)


def clamp_action(action, limit):
    return np.clip(np.asarray(action, dtype=np.float64), -limit, limit)


def stance_mask(gait_phase):
    first = np.asarray(gait_phase) < 0.5
    return np.where(first[:, None], _FIRST_HALF_STANCE[None, :], ~_FIRST_HALF_STANCE[None, :])


def rotate(vec, angle):
    """Rotates planar vectors (N, 2) by angles (N,)."""
    c = np.cos(angle)
    s = np.sin(angle)
    return np.stack([c * vec[:, 0] - s * vec[:, 1], s * vec[:, 0] + c * vec[:, 1]], axis=1)


def foot_velocities(v, omega, offsets):
    """Body-frame velocity of each foot contact point, (N, 4, 2)."""
    spin = np.stack([-offsets[:, 1], offsets[:, 0]], axis=1)  # omega x r
    return v[:, None, :] + omega[:, None, None] * spin[None, :, :]


def contact_forces(u, v_foot, stance, mu, normal_load, traction_gain):
    """Traction per foot projected onto the Coulomb cone |f| <= mu N."""
    desired = traction_gain * (u - v_foot) * stance[:, :, None]
    magnitude = np.linalg.norm(desired, axis=2)
    limit = (mu * normal_load)[:, None] * stance
    saturated = stance & (magnitude > limit)
    scale = np.ones_like(magnitude)
    scale[saturated] = limit[saturated] / magnitude[saturated]
    force = desired * scale[:, :, None]
    slip = np.zeros_like(desired)
    slip[saturated] = (desired[saturated] - force[saturated]) / traction_gain
    return ContactResult(force, slip, stance.copy(), saturated, desired)


def payload_drag(applied, v, mu, mode, cfg):
    if not mode.is_dragging or mode.payload_mass_kg == 0:
        return np.zeros_like(applied)
    limit = mu * mode.payload_mass_kg * cfg.gravity
    speed = np.linalg.norm(v, axis=1)
    moving = speed > cfg.static_speed_threshold
    kinetic = -limit[:, None] * v / np.maximum(speed, 1e-12)[:, None]
    applied_norm = np.linalg.norm(applied, axis=1)
    holds = applied_norm <= limit
    static = np.where(holds[:, None], -applied,
                      -applied / np.maximum(applied_norm, 1e-12)[:, None] * limit[:, None])
    return np.where(moving[:, None], kinetic, static)


def integrate(state, action, mu, roughness, mode, cfg, rough_noise):
    """Advances every robot one control step.

    rough_noise: (N, 4, 2) standard normals scaled into per-foot roughness
    forces. Returns (new_state, planar body acceleration (N, 2), ContactResult).
    """
    offsets = cfg.foot_offsets
    u = clamp_action(action, cfg.action_limit).reshape(-1, N_FEET, 2)
    stance = stance_mask(state.gait_phase)
    v_foot = foot_velocities(state.v, state.omega, offsets)
    contact = contact_forces(u, v_foot, stance, mu, cfg.stance_load, cfg.traction_gain)

    rough_force = (cfg.roughness_force_scale * roughness)[:, None, None] * rough_noise * stance[:, :, None]
    foot_total = contact.force + rough_force
    applied = foot_total.sum(axis=1) - cfg.body_damping * state.v
    drag = payload_drag(applied, state.v, mu, mode, cfg)
    accel = (applied + drag) / cfg.mass_kg

    torque = np.sum(offsets[None, :, 0] * foot_total[:, :, 1] - offsets[None, :, 1] * foot_total[:, :, 0], axis=1)
    alpha = (torque - cfg.yaw_damping * state.omega) / cfg.yaw_inertia

    v_world = rotate(state.v + accel * cfg.dt, state.psi)
    omega = state.omega + alpha * cfg.dt
    psi = state.psi + omega * cfg.dt
    psi = np.where(psi > math.pi, psi - 2 * math.pi, psi)
    psi = np.where(psi <= -math.pi, psi + 2 * math.pi, psi)
    p = state.p + v_world * cfg.dt
    v = rotate(v_world, -psi)
    # v is exactly zero at rest; skip the round trip so equilibrium is exact
    at_rest = ~np.any(v_world != 0.0, axis=1)
    v[at_rest] = 0.0
    phase = np.mod(state.gait_phase + cfg.dt * cfg.gait_freq_hz, 1.0)
    new_state = RobotState(p, psi, v, omega, phase, state.step_count + 1)
    return new_state, accel, contact


def build_observation(state, accel, action, contact, cfg, obs_noise):
    """27-dim normalised observation; obs_noise (N, 13) standard normals for measured channels."""
    n = state.size
    obs = np.zeros((n, OBS_DIM), dtype=np.float64)
    obs[:, OBS_V] = state.v
    obs[:, OBS_OMEGA] = state.omega[:, None]
    obs[:, OBS_ACCEL] = accel / cfg.accel_scale
    angle = 2.0 * math.pi * state.gait_phase
    obs[:, OBS_PHASE] = np.stack([np.sin(angle), np.cos(angle)], axis=1)
    obs[:, OBS_ACTION] = clamp_action(action, cfg.action_limit) / cfg.action_limit
    obs[:, OBS_SLIP] = contact.slip.reshape(n, -1) / cfg.slip_scale
    obs[:, OBS_STANCE] = stance_mask(state.gait_phase).astype(np.float64)
    obs[:, MEASURED_CHANNELS] += cfg.obs_noise_std * obs_noise
    return obs


def step(state, action, grid, mode, rng, cfg=None):
    """One step of a single robot (batch of one) on `grid`.

    Returns (RobotState, observation (27,), ContactResult). A non-finite
    result raises SimulationFault.
    """
    from utils.terrain import query_params_many

    cfg = cfg or SimConfig()
    action = np.asarray(action, dtype=np.float64).reshape(1, ACTION_DIM)
    mu, rough = query_params_many(grid, state.p)
    noise = rng.standard_normal(NOISE_PER_STEP)
    new_state, accel, contact = integrate(state, action, np.atleast_1d(mu), np.atleast_1d(rough), mode, cfg,
                                          noise[:N_ROUGH_NOISE].reshape(1, N_FEET, 2))
    if not new_state.is_finite().all():
        raise SimulationFault("Non-finite robot state after step.", [0])
    obs = build_observation(new_state, accel, action, contact, cfg, noise[N_ROUGH_NOISE:].reshape(1, -1))
    return new_state, obs[0], contact


class VecEnv:
    """N independent episodic robots stepped together.

    Env i draws every random number from its own generator, seeded from
    derive_seed(seed, i), so a VecEnv reproduces N single-robot envs exactly.
    """

    def __init__(self, grids, mode, n_envs, seed, cfg=None, command=None, spawn="uniform", env_seeds=None):
        self.cfg = cfg or SimConfig()
        self.grids = list(grids) if isinstance(grids, (list, tuple)) else [grids]
        if not self.grids:
            raise ConfigurationError("At least one world is required.")
        for grid in self.grids:
            check_world_size(grid)
            margin = self.cfg.spawn_margin_m
            ex, ey = grid.extent
            if spawn == "uniform" and (ex <= 2 * margin or ey <= 2 * margin):
                raise ConfigurationError(f"World '{grid.name}' leaves no room for a {margin:g} m spawn margin.")
        if spawn not in ("uniform", "center"):
            raise ConfigurationError(f"Unknown spawn mode '{spawn}'.")
        self.mode = mode
        self.n = int(n_envs)
        self.spawn = spawn
        self.fixed_command = None if command is None else np.asarray(command, dtype=np.float64).reshape(3)
        seeds = env_seeds if env_seeds is not None else [derive_seed(seed, i) for i in range(self.n)]
        self.env_seeds = [int(s) for s in seeds]
        self.rngs = [np.random.default_rng(s) for s in self.env_seeds]
        self.grid_index = np.arange(self.n) % len(self.grids)
        self.state = RobotState.zeros(self.n)
        self.commands = np.zeros((self.n, 3))
        self.obs = np.zeros((self.n, OBS_DIM))
        self.prev_action = np.zeros((self.n, ACTION_DIM))
        self.episode_energy = np.zeros(self.n)
        self.faults = 0

    # -- terrain -----------------------------------------------------------
    def _inside(self, p):
        inside = np.zeros(self.n, dtype=bool)
        for gi, grid in enumerate(self.grids):
            sel = self.grid_index == gi
            if sel.any():
                inside[sel] = grid.contains(p[sel])
        return inside

    def terrain_params(self, p=None):
        p = self.state.p if p is None else p
        mu = np.zeros(self.n)
        rough = np.zeros(self.n)
        for gi, grid in enumerate(self.grids):
            sel = self.grid_index == gi
            if not sel.any():
                continue
            pts = p[sel]
            # robots that just left the world read their last in-bounds cell
            ex, ey = grid.extent
            pts = np.stack([np.clip(pts[:, 0], 0.0, np.nextafter(ex, 0)),
                            np.clip(pts[:, 1], 0.0, np.nextafter(ey, 0))], axis=1)
            col = np.minimum((pts[:, 0] / grid.cell_size_m).astype(np.int64), grid.width - 1)
            row = np.minimum((pts[:, 1] / grid.cell_size_m).astype(np.int64), grid.height - 1)
            mu[sel] = grid.mu[row, col]
            rough[sel] = grid.roughness[row, col]
        return mu, rough

    # -- episodes ------------------------------------------------------------
    def _spawn_one(self, i):
        rng = self.rngs[i]
        grid = self.grids[self.grid_index[i]]
        ex, ey = grid.extent
        m = self.cfg.spawn_margin_m
        if self.spawn == "uniform":
            x = rng.uniform(m, ex - m)
            y = rng.uniform(m, ey - m)
        else:
            x = 0.5 * ex + rng.uniform(-0.5, 0.5)
            y = 0.5 * ey + rng.uniform(-0.5, 0.5)
        yaw = rng.uniform(-math.pi, math.pi)
        if self.fixed_command is not None:
            cmd = self.fixed_command.copy()
        else:
            cfg = self.cfg
            cmd = np.array([rng.uniform(cfg.cmd_vx_min, cfg.cmd_vx_max),
                            rng.uniform(-cfg.cmd_vy_max, cfg.cmd_vy_max),
                            rng.uniform(-cfg.cmd_wz_max, cfg.cmd_wz_max)])
        noise = rng.standard_normal(N_MEASURED)
        return x, y, yaw, cmd, noise

    def reset(self, mask=None):
        """Resets the selected envs (all by default); returns the full observation batch."""
        idx = np.arange(self.n) if mask is None else np.flatnonzero(mask)
        for i in idx:
            x, y, yaw, cmd, noise = self._spawn_one(i)
            self.state.p[i] = (x, y)
            self.state.psi[i] = yaw
            self.state.v[i] = 0.0
            self.state.omega[i] = 0.0
            self.state.gait_phase[i] = 0.0
            self.state.step_count[i] = 0
            self.commands[i] = cmd
            self.prev_action[i] = 0.0
            self.episode_energy[i] = 0.0
            zero = ContactResult(np.zeros((1, N_FEET, 2)), np.zeros((1, N_FEET, 2)),
                                 np.zeros((1, N_FEET), bool), np.zeros((1, N_FEET), bool),
                                 np.zeros((1, N_FEET, 2)))
            self.obs[i] = build_observation(self.state.rows([i]), np.zeros((1, 2)), np.zeros((1, ACTION_DIM)),
                                            zero, self.cfg, noise[None, :])[0]
        return self.obs.copy()

    def step(self, actions):
        """Steps every env; finished envs are reset in place.

        Returns (obs, contact, dones, info). info holds per-env arrays:
        e (mu, roughness under the feet during the step), dx (body-frame
        displacement of the step), accel, timeout, out_of_bounds, fault,
        terminal_obs (observation before any reset), energy (episode sum of
        |f|^2 for envs that just finished).
        """
        actions = clamp_action(np.asarray(actions, dtype=np.float64).reshape(self.n, ACTION_DIM),
                               self.cfg.action_limit)
        mu, rough = self.terrain_params()
        noise = np.stack([rng.standard_normal(NOISE_PER_STEP) for rng in self.rngs])
        old = self.state
        new_state, accel, contact = integrate(old, actions, mu, rough, self.mode, self.cfg,
                                              noise[:, :N_ROUGH_NOISE].reshape(self.n, N_FEET, 2))
        fault = ~new_state.is_finite()
        if fault.any():
            self.faults += int(fault.sum())
            logger.warning("[SIM] Simulation fault in env(s) %s; episode aborted.", np.flatnonzero(fault).tolist())
            safe = old.rows(fault)
            new_state.assign(fault, safe)
            accel[fault] = 0.0
            for arr in (contact.force, contact.slip, contact.desired):
                arr[fault] = 0.0
            contact.saturated[fault] = False
        obs = build_observation(new_state, accel, actions, contact, self.cfg, noise[:, N_ROUGH_NOISE:])
        dx = rotate(new_state.p - old.p, -old.psi)
        self.episode_energy += contact.force_sq()

        out = ~self._inside(new_state.p)
        timeout = new_state.step_count >= self.cfg.horizon_steps
        dones = fault | out | timeout
        info = {
            "e": np.stack([mu, rough], axis=1),
            "dx": dx,
            "accel": accel,
            "timeout": timeout & ~fault & ~out,
            "out_of_bounds": out & ~fault,
            "fault": fault,
            "terminal_obs": obs.copy(),
            "energy": np.where(dones, self.episode_energy, 0.0),
            "prev_state": old,
            "v": new_state.v.copy(),
            "omega": new_state.omega.copy(),
        }
        self.state = new_state
        self.prev_action = actions
        self.obs = obs
        if dones.any():
            self.reset(dones)
        return self.obs.copy(), contact, dones, info

    def foot_velocities(self):
        return foot_velocities(self.state.v, self.state.omega, self.cfg.foot_offsets)


class Env:
    """Single-robot episodic wrapper: reset(), step(action), 20 s horizon."""

    def __init__(self, grid, mode, command, seed, cfg=None, spawn="uniform"):
        self._venv = VecEnv([grid], mode, 1, seed, cfg=cfg, command=command, spawn=spawn,
                            env_seeds=[derive_seed(seed, 0)])

    @property
    def state(self):
        return self._venv.state

    @property
    def cfg(self):
        return self._venv.cfg

    @property
    def command(self):
        return self._venv.commands[0].copy()

    @property
    def horizon_steps(self):
        return self._venv.cfg.horizon_steps

    def reset(self):
        return self._venv.reset()[0]

    def step(self, action):
        obs, contact, dones, info = self._venv.step(np.asarray(action).reshape(1, ACTION_DIM))
        return obs[0], contact, bool(dones[0]), {k: (v[0] if isinstance(v, np.ndarray) else v)
                                                  for k, v in info.items() if k != "prev_state"}


def make_env(grid, mode, command, seed, cfg=None, spawn="uniform"):
    """Episodic env on `grid`; command is (vx, vy, wz) in the body frame, or None to sample per episode."""
    return Env(grid, mode, command, seed, cfg=cfg, spawn=spawn)


# -- scripted controllers ------------------------------------------------------

class TrackingController:
    """Commands u_i = v_foot_i on every foot: zero traction, zero slip."""

    def reset(self, mask=None):
        pass

    def act(self, venv):
        return venv.foot_velocities().reshape(venv.n, ACTION_DIM)


class SwipeController(TrackingController):
    """Tracks on every foot except `foot`, which is driven at a constant velocity."""

    def __init__(self, foot=0, velocity=(1.5, 0.0)):
        self.foot = foot
        self.velocity = np.asarray(velocity, dtype=np.float64)

    def act(self, venv):
        u = venv.foot_velocities().copy()
        u[:, self.foot] = self.velocity
        return u.reshape(venv.n, ACTION_DIM)


class VelocityTrackingController:
    """Proportional body-velocity tracker using the true state."""

    def __init__(self, kp=1.0, kw=1.0):
        self.kp = kp
        self.kw = kw

    def reset(self, mask=None):
        pass

    def act(self, venv):
        offsets = venv.cfg.foot_offsets
        cmd_v = venv.commands[:, :2]
        cmd_w = venv.commands[:, 2]
        v_target = cmd_v + self.kp * (cmd_v - venv.state.v)
        w_target = cmd_w + self.kw * (cmd_w - venv.state.omega)
        u = foot_velocities(v_target, w_target, offsets)
        return clamp_action(u.reshape(venv.n, ACTION_DIM), venv.cfg.action_limit)


def rollout(venv, controller, steps):
    """Runs a controller for `steps` steps; returns per-step contacts and infos."""
    contacts = []
    infos = []
    for _ in range(steps):
        _, contact, _, info = venv.step(controller.act(venv))
        contacts.append(contact)
        infos.append(info)
    return contacts, infos


def information_proxy(mu_values, controller, steps=200, seed=0, cfg=None):
    """Variance across mu of the mean slip magnitude under a scripted controller.

    Runs on flat, roughness-free uniform worlds; positive means slip carries
    information about friction.
    """
    from utils.terrain import uniform_world

    cfg = cfg or SimConfig()
    means = []
    for mu in mu_values:
        grid = uniform_world(mu, 0.0, size_m=20.0)
        venv = VecEnv([grid], OperatingMode.free(), 1, seed, cfg=cfg, command=(0.0, 0.0, 0.0), spawn="center")
        venv.reset()
        contacts, _ = rollout(venv, controller, steps)
        means.append(float(np.mean([c.slip_norm().sum() for c in contacts])))
    return float(np.var(means)), means


def scripted_energy(mu, controller, steps=200, seed=0, cfg=None):
    """Sum of |f|^2 over a scripted rollout on a uniform world."""
    from utils.terrain import uniform_world

    cfg = cfg or SimConfig()
    grid = uniform_world(mu, 0.0, size_m=20.0)
    venv = VecEnv([grid], OperatingMode.free(), 1, seed, cfg=cfg, command=(0.0, 0.0, 0.0), spawn="center")
    venv.reset()
    contacts, _ = rollout(venv, controller, steps)
    return float(sum(c.force_sq()[0] for c in contacts))
