"""Self-supervised dataset collection: policy rollouts -> camera frames + projected labels."""

import json
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from utils.camera import (LABEL_COLUMNS, LabeledImage, OdometryTrack, OracleEstimator, project_traversal,
                          render_pinhole)
from utils.errors import ConfigurationError, ContractViolation, MissingArtifactError
from utils.imageio import read_ppm, write_ppm
from utils.noise import derive_seed
from utils.policy import PolicyRunner
from utils.settings import DATA_DEFAULTS
from utils.simcore import OperatingMode, VecEnv
from utils.tables import read_csv, write_csv
from utils.terrain import render_texture
from utils.trajlog import TrajectoryLog, export_csv, write_log
from utils.workers import parallel_map

logger = logging.getLogger(__name__)

MAX_ATTEMPT_FACTOR = 4


@dataclass(frozen=True)
class DataConfig:
    minutes: float = DATA_DEFAULTS["minutes"]
    fps: float = DATA_DEFAULTS["fps"]
    min_range_m: float = DATA_DEFAULTS["min_range_m"]
    max_range_m: float = DATA_DEFAULTS["max_range_m"]
    episode_s: float = DATA_DEFAULTS["episode_s"]

    def __post_init__(self):
        if not (self.minutes > 0 and self.fps > 0 and self.episode_s > 0):
            raise ConfigurationError("[data] minutes, fps and episode_s must be positive.")
        if not 0 <= self.min_range_m < self.max_range_m:
            raise ConfigurationError("[data] need 0 <= min_range_m < max_range_m.")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (data or {}).items() if k in names})

    @property
    def n_frames(self):
        return int(round(self.minutes * 60.0 * self.fps))


@dataclass
class Trajectory:
    index: int
    seed: int
    grid_index: int
    track: OdometryTrack
    estimates: np.ndarray  # (T, 2) clamped (mu, r) after each step
    e_true: np.ndarray     # (T, 2)
    faulted: bool
    log: np.ndarray = None  # trajlog records, one per completed step


def run_trajectory(checkpoint, grid, steps, seed, index=0, grid_index=0, oracle=False):
    """One policy episode of up to `steps` steps on `grid`.

    Pose j is the pose before step j; estimates[j] is the estimate formed
    right after step j, i.e. of the terrain under pose j.
    """
    sim = checkpoint.sim
    venv = VecEnv([grid], OperatingMode.free(), 1, seed, cfg=sim, env_seeds=[seed])
    venv.reset()
    runner = PolicyRunner(checkpoint, 1)
    runner.reset(venv)
    true_poses = [np.array([*venv.state.p[0], venv.state.psi[0]])]
    est_poses = [true_poses[0].copy()]
    estimates, e_true = [], []
    log = TrajectoryLog()
    faulted = False
    for _ in range(steps):
        obs = venv.obs[0].copy()
        action, contact, dones, info, estimate, pose_hat = runner.step(venv)
        if info["fault"][0]:
            faulted = True
            break
        log.append_from_venv(venv, 0, action[0], obs, info, contact)
        e_true.append(info["e"][0])
        estimates.append(estimate[0, :2])
        if dones[0]:
            break
        true_poses.append(np.array([*venv.state.p[0], venv.state.psi[0]]))
        est_poses.append(pose_hat[0])
    n = len(estimates)
    true_arr = np.asarray(true_poses[:n]).reshape(-1, 3)
    est_arr = np.asarray(est_poses[:n]).reshape(-1, 3)
    e_arr = np.asarray(e_true).reshape(-1, 2)
    est_e = np.asarray(estimates).reshape(-1, 2)
    if oracle:
        est_arr = OracleEstimator.poses(true_arr)
        est_e = OracleEstimator.estimates(e_arr)
    return Trajectory(index, seed, grid_index, OdometryTrack(est_arr, true_arr), est_e, e_arr, faulted, log.records())


def build_dataset(checkpoint, grids, data_cfg, camera, seed, texture_ppm=32.0, jobs=1, oracle=False,
                  sky_color=None, void_color=None, log_dir=None):
    """Runs the policy, renders frames at data_cfg.fps and labels them from its own estimates.

    Returns (list of LabeledImage, list of per-trajectory summaries). With
    `log_dir`, each kept trajectory is also written there as a binary
    trajectory log, and the first one is exported to CSV alongside.
    """
    if not grids:
        raise ConfigurationError("Dataset collection needs at least one world.")
    dt = checkpoint.sim.dt
    stride = int(round(1.0 / (data_cfg.fps * dt)))
    if stride < 1:
        raise ConfigurationError(f"[data] fps {data_cfg.fps} exceeds the control rate.")
    steps = int(round(data_cfg.episode_s / dt))
    per_traj = max(1, math.ceil(steps / stride))
    target = data_cfg.n_frames
    textures = [render_texture(g, texture_ppm, g.seed) for g in grids]
    colors = {}
    if sky_color is not None:
        colors["sky_color"] = sky_color
    if void_color is not None:
        colors["void_color"] = void_color

    images, summaries = [], []
    attempt = 0
    max_attempts = MAX_ATTEMPT_FACTOR * max(1, math.ceil(target / per_traj))
    while len(images) < target and attempt < max_attempts:
        batch = list(range(attempt, min(attempt + max(1, jobs), max_attempts)))
        attempt = batch[-1] + 1

        def run(i):
            gi = i % len(grids)
            return run_trajectory(checkpoint, grids[gi], steps, derive_seed(seed, i), i, gi, oracle)

        for traj in parallel_map(run, batch, jobs):
            if traj.faulted:
                logger.warning("[DATA] Trajectory %d faulted; segment dropped.", traj.index)
                continue
            grid = grids[traj.grid_index]
            n = len(traj.track)
            drift = traj.track.drift()
            summaries.append({
                "trajectory": traj.index, "seed": traj.seed, "world": grid.name, "steps": n,
                "max_drift_m": float(drift.max()) if n else 0.0,
                "drift_10s_m": traj.track.window_drift(int(round(10.0 / dt))),
            })
            if log_dir is not None:
                summaries[-1]["log"] = _write_trajectory_log(log_dir, traj, first=len(summaries) == 1)
            for k in range(0, n, stride):
                if len(images) >= target:
                    break
                pose = traj.track.true[k]
                rgb = render_pinhole(textures[traj.grid_index], texture_ppm, camera, pose, **colors)
                labels = project_traversal(traj.track, traj.estimates, camera, k, data_cfg.min_range_m,
                                           data_cfg.max_range_m, grid=grid)
                meta = {"frame": len(images), "trajectory": traj.index, "step": int(k),
                        "timestamp_s": k * dt, "pose": [float(x) for x in pose],
                        "pose_hat": [float(x) for x in traj.track.estimated[k]], "world": grid.name}
                images.append(LabeledImage(rgb, labels, meta))
    if len(images) < target:
        logger.warning("[DATA] Collected %d of %d frames after %d trajectories.", len(images), target, attempt)
    n_labels = sum(len(im.labels) for im in images)
    logger.info("[DATA] %d frames, %d labels from %d trajectories.", len(images), n_labels, len(summaries))
    return images, summaries


def _write_trajectory_log(log_dir, traj, first=False):
    log_dir = Path(log_dir)
    name = f"traj_{traj.index:05d}"
    write_log(log_dir / f"{name}.tstl", traj.log)
    if first:
        export_csv(log_dir / f"{name}.csv", traj.log)
    return f"{log_dir.name}/{name}.tstl"


def label_error(images):
    """Mean |label mu - true mu at the labelled pixel| over labels with ground truth."""
    errs = [np.abs(im.labels[:, 2] - im.labels[:, 5]) for im in images if len(im.labels)]
    errs = np.concatenate(errs) if errs else np.zeros(0)
    errs = errs[np.isfinite(errs)]
    return float(errs.mean()) if errs.size else float("nan")


def save_dataset(directory, images, summaries, camera, extra=None):
    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    (directory / "labels").mkdir(parents=True, exist_ok=True)
    frames = []
    for i, im in enumerate(images):
        name = f"frame_{i:05d}"
        write_ppm(directory / "frames" / f"{name}.ppm", im.rgb)
        rows = [[float(r[0]), float(r[1]), float(r[2]), float(r[3]), int(r[4]), float(r[5]), float(r[6])]
                for r in im.labels]
        write_csv(directory / "labels" / f"{name}.csv", LABEL_COLUMNS, rows)
        frames.append({**im.meta, "image": f"frames/{name}.ppm", "labels": f"labels/{name}.csv",
                       "n_labels": len(im.labels)})
    manifest = {"camera": camera.to_dict(), "frames": frames, "trajectories": summaries,
                "label_error_mu": label_error(images), **(extra or {})}
    with open(directory / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return directory / "manifest.json"


def load_dataset(directory):
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise MissingArtifactError("dataset manifest", "collect-data", manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    images = []
    for entry in manifest["frames"]:
        rgb = read_ppm(directory / entry["image"])
        _, header, rows = read_csv(directory / entry["labels"])
        if tuple(header) != LABEL_COLUMNS:
            raise ContractViolation(f"Unexpected label columns in {entry['labels']}: {header}")
        labels = np.array([[float(x) for x in r] for r in rows], dtype=np.float64).reshape(-1, len(LABEL_COLUMNS))
        meta = {k: v for k, v in entry.items() if k not in ("image", "labels", "n_labels")}
        images.append(LabeledImage(rgb, labels, meta))
    return images, manifest
