import configparser
import logging

logger = logging.getLogger(__name__)

SIM_DEFAULTS = {
    "dt": 0.02,
    "mass_kg": 12.0,
    "gravity": 9.81,
    "traction_gain": 60.0,
    "body_damping": 2.0,
    "yaw_inertia": 0.35,
    "yaw_damping": 0.5,
    "roughness_force_scale": 20.0,
    "gait_freq_hz": 2.0,
    "obs_noise_std": 0.05,
    "action_limit": 1.5,
    "payload_mass_kg": 1.0,
    "static_speed_threshold": 0.01,
    "horizon_s": 20.0,
    "spawn_margin_m": 1.0,
    "foot_offset_x": 0.19,
    "foot_offset_y": 0.13,
    "accel_scale": 5.0,
    "slip_scale": 1.0,
    # command sampling for training episodes
    "cmd_vx_min": 0.0,
    "cmd_vx_max": 1.5,
    "cmd_vy_max": 0.3,
    "cmd_wz_max": 0.5,
}

PPO_DEFAULTS = {
    "gamma": 0.99,
    "gae_lambda": 0.95,
    "steps_per_rollout": 21,
    "epochs": 5,
    "minibatches": 4,
    "entropy_coef": 0.01,
    "value_coef": 1.0,
    "clip": 0.2,
    "lr": 1e-3,
    "normalize_rewards": True,
    "num_envs": 256,
    "iterations": 300,
    "max_grad_norm": 1.0,
    "init_std": 0.5,
    "policy_hidden": [256, 256],
    "value_hidden": [256, 256],
    "estimator_hidden": [128, 128],
    "history_len": 25,
    "estimator_lr": 1e-3,
    "log_every": 10,
}

REWARD_DEFAULTS = {
    "vel_xy": 1.0,
    "vel_yaw": 0.5,
    "swing_force": -4.0,
    "stance_slip": -4.0,
    "force_magnitude": -1e-4,
    "action_rate": -0.1,
    "action_curvature": -0.1,
    "asmp": -0.3,
    "sigma_vxy": 0.25,
    "sigma_wz": 0.25,
    "delta_cf": 0.01,
    "delta_cv": 0.25,
    # rewards are accumulated per control step, scaled by dt
    "scale_by_dt": True,
}

CAMERA_DEFAULTS = {
    "width": 160,
    "height": 120,
    "fx": 110.0,
    "fy": 110.0,
    "cx": 79.5,
    "cy": 59.5,
    "mount_height_m": 0.35,
    "pitch_deg": 20.0,
    "mount_forward_m": 0.2,
    "texture_px_per_m": 32.0,
    "overhead_px_per_m": 16.0,
    "sky_color": [150, 190, 235],
    "void_color": [20, 20, 20],
}

DATA_DEFAULTS = {
    "minutes": 5.0,
    "fps": 5.0,
    "min_range_m": 1.0,
    "max_range_m": 5.0,
    "episode_s": 20.0,
}

VISION_DEFAULTS = {
    "patch_px": 8,
    "bins": 20,
    "lr": 1e-3,
    "batch_size": 64,
    "epochs": 20,
    "holdout_fraction": 0.1,
    "mu_min": 0.25,
    "mu_max": 3.0,
    "rough_min": 0.0,
    "rough_max": 1.0,
}

COSTMAP_DEFAULTS = {
    "mu_points": 12,
    "mu_min": 0.25,
    "mu_max": 3.0,
    "n_agents": 50,
    "horizon_s": 20.0,
    "command_speed": 1.0,
    "cost_cap": 200.0,
    "min_distance_m": 0.1,
    "max_retries": 3,
    "world_size_m": 60.0,
    "roughness": 0.0,
    "downsample": 8,
}

PLANNER_DEFAULTS = {
    # (row, col) cells of the downsampled cost map
    "start": [16, 4],
    "goal": [16, 59],
}

EVAL_DEFAULTS = {
    "num_envs": 32,
    "steps": 500,
    "histogram_bins": 22,
    "seed_offset": 1000,
}

EXPERIMENT_DEFAULTS = {
    "world_spec": "demo_worlds.ini",
    "train_worlds": ["two_class", "mixed"],
    "eval_world": "two_class_holdout",
    "vision_world": "quadrants",
    "plan_world": "crossing",
    "variants": ["no-se", "passive-se", "active-se"],
    "data_variants": ["active-se", "passive-se"],
    "cost_variant": "passive-se",
    "plan_variant": "active-se",
    "seeds": [0, 1, 2],
    "output_dir": "runs",
    "jobs": 1,
}

DEFAULT_SETTINGS = {
    "experiment": EXPERIMENT_DEFAULTS,
    "sim": SIM_DEFAULTS,
    "ppo": PPO_DEFAULTS,
    "reward": REWARD_DEFAULTS,
    "camera": CAMERA_DEFAULTS,
    "data": DATA_DEFAULTS,
    "vision": VISION_DEFAULTS,
    "costmap": COSTMAP_DEFAULTS,
    "planner": PLANNER_DEFAULTS,
    "eval": EVAL_DEFAULTS,
}

_TRUE = {"1", "yes", "true", "on"}
_FALSE = {"0", "no", "false", "off"}


def _coerce(raw, default):
    """Parses an INI string into the type of the default; raises ValueError on mismatch."""
    if isinstance(raw, type(default)) and not isinstance(raw, str):
        return raw
    text = str(raw).strip()
    if isinstance(default, bool):
        lowered = text.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, list):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if default and isinstance(default[0], bool):
            return [_coerce(t, default[0]) for t in items]
        if default and isinstance(default[0], (int, float)):
            return [_coerce(t, default[0]) for t in items]
        return items
    return text


def merge_section(section, values):
    """Overlays user values on the defaults of one section, key by key."""
    defaults = DEFAULT_SETTINGS[section]
    merged = {k: (list(v) if isinstance(v, list) else v) for k, v in defaults.items()}
    for key, raw in (values or {}).items():
        if key not in defaults:
            logger.warning("[CONFIG] Unknown key '%s' in [%s]; ignored.", key, section)
            continue
        try:
            merged[key] = _coerce(raw, defaults[key])
        except (ValueError, TypeError) as e:
            logger.warning("[CONFIG] Invalid value %r for '%s' in [%s] (%s). Using default %r.",
                           raw, key, section, e, defaults[key])
    return merged


def read_ini(path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, "r", encoding="utf-8") as f:
        parser.read_file(f)
    return {name: dict(parser.items(name)) for name in parser.sections()}


def load_settings(path=None, overrides=None):
    """Returns every section with defaults filled in.

    `overrides` is a mapping section -> {key: value} applied after the file,
    used by the CLI for per-stage overrides.
    """
    raw = {}
    if path is not None:
        raw = read_ini(path)
        for section in raw:
            if section not in DEFAULT_SETTINGS:
                logger.warning("[CONFIG] Unknown section [%s] in %s; ignored.", section, path)
    for section, values in (overrides or {}).items():
        raw.setdefault(section, {}).update(values)
    return {section: merge_section(section, raw.get(section)) for section in DEFAULT_SETTINGS}
