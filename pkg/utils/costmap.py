"""Mode-specific cost curves C(mu) from rollouts, and cost maps from dense mu predictions."""

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from utils.errors import ConfigurationError, ContractViolation
from utils.noise import derive_seed
from utils.policy import PolicyRunner
from utils.settings import COSTMAP_DEFAULTS
from utils.simcore import OperatingMode, VecEnv, rotate
from utils.tables import read_csv, read_grid, write_csv, write_grid
from utils.terrain import uniform_world
from utils.workers import parallel_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CostConfig:
    mu_points: int = COSTMAP_DEFAULTS["mu_points"]
    mu_min: float = COSTMAP_DEFAULTS["mu_min"]
    mu_max: float = COSTMAP_DEFAULTS["mu_max"]
    n_agents: int = COSTMAP_DEFAULTS["n_agents"]
    horizon_s: float = COSTMAP_DEFAULTS["horizon_s"]
    command_speed: float = COSTMAP_DEFAULTS["command_speed"]
    cost_cap: float = COSTMAP_DEFAULTS["cost_cap"]
    min_distance_m: float = COSTMAP_DEFAULTS["min_distance_m"]
    max_retries: int = COSTMAP_DEFAULTS["max_retries"]
    world_size_m: float = COSTMAP_DEFAULTS["world_size_m"]
    roughness: float = COSTMAP_DEFAULTS["roughness"]
    downsample: int = COSTMAP_DEFAULTS["downsample"]

    def __post_init__(self):
        if self.mu_points < 2 or self.n_agents < 1 or self.downsample < 1:
            raise ConfigurationError("[costmap] mu_points >= 2, n_agents >= 1 and downsample >= 1 are required.")
        if not (self.horizon_s > 0 and self.cost_cap > 0 and self.mu_max > self.mu_min):
            raise ConfigurationError("[costmap] horizon, cost cap and mu range must be positive.")
        if self.command_speed * self.horizon_s >= self.world_size_m / 2:
            raise ConfigurationError("[costmap] world too small for the commanded walk.")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (data or {}).items() if k in names})

    def mu_grid(self):
        return np.linspace(self.mu_min, self.mu_max, self.mu_points)


@dataclass
class CostCurve:
    mode: str
    mu_grid: np.ndarray
    cost: np.ndarray  # seconds per metre
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mu_grid = np.asarray(self.mu_grid, dtype=np.float64)
        self.cost = np.asarray(self.cost, dtype=np.float64)
        if self.mu_grid.shape != self.cost.shape or self.mu_grid.ndim != 1:
            raise ContractViolation("Cost curve grid and costs are misaligned.")
        if np.any(np.diff(self.mu_grid) <= 0):
            raise ContractViolation("Cost curve mu grid must be strictly increasing.")
        if not np.all(np.isfinite(self.cost)) or np.any(self.cost <= 0):
            raise ContractViolation("Cost curve values must be positive and finite.")

    def save(self, path):
        meta = {"mode": self.mode, **self.meta}
        return write_csv(path, ("mu", "seconds_per_meter"), zip(self.mu_grid.tolist(), self.cost.tolist()), meta)

    @classmethod
    def load(cls, path):
        meta, header, rows = read_csv(path)
        if tuple(header) != ("mu", "seconds_per_meter"):
            raise ContractViolation(f"Unexpected cost curve columns in {path}: {header}")
        arr = np.array([[float(a), float(b)] for a, b in rows])
        mode = meta.pop("mode", "free")
        return cls(mode, arr[:, 0], arr[:, 1], meta)


def _walk_distances(runner_ckpt, mu, mode, cfg, seeds):
    """Forward displacement of one agent per seed over the horizon; NaN marks a faulted agent."""
    sim = runner_ckpt.sim
    sim = type(sim).from_dict({**sim.to_dict(), "horizon_s": cfg.horizon_s})
    grid = uniform_world(mu, cfg.roughness, size_m=cfg.world_size_m)
    n = len(seeds)
    venv = VecEnv([grid], mode, n, 0, cfg=sim, command=(cfg.command_speed, 0.0, 0.0), spawn="center",
                  env_seeds=seeds)
    venv.reset()
    runner = PolicyRunner(runner_ckpt, n)
    runner.reset(venv)
    travelled = np.zeros((n, 2))
    active = np.ones(n, dtype=bool)
    faulted = np.zeros(n, dtype=bool)
    for _ in range(sim.horizon_steps):
        _, _, dones, info, _, _ = runner.step(venv)
        prev = info["prev_state"]
        world_dx = rotate(info["dx"], prev.psi)
        travelled[active] += world_dx[active]
        faulted |= active & info["fault"]
        active &= ~dones
        if not active.any():
            break
    dist = np.linalg.norm(travelled, axis=1)
    dist[faulted] = np.nan
    return dist


def measure_cost_curve(checkpoint, mode, cfg=None, seed=0, mu_grid=None, jobs=1):
    """Seconds per metre at each grid friction: horizon / mean distance, capped.

    Faulted agents are re-run with fresh seeds up to cfg.max_retries times;
    agents still faulted after that are left out of the mean.
    """
    cfg = cfg or CostConfig()
    mode = OperatingMode.parse(mode) if isinstance(mode, str) else mode
    grid_mu = cfg.mu_grid() if mu_grid is None else np.asarray(mu_grid, dtype=np.float64)

    def measure(k):
        mu = float(grid_mu[k])
        seeds = [derive_seed(seed, k, a) for a in range(cfg.n_agents)]
        dist = _walk_distances(checkpoint, mu, mode, cfg, seeds)
        for retry in range(1, cfg.max_retries + 1):
            bad = np.flatnonzero(np.isnan(dist))
            if bad.size == 0:
                break
            logger.warning("[COST] mu=%.3f: re-seeding %d faulted agent(s) (retry %d).", mu, bad.size, retry)
            dist[bad] = _walk_distances(checkpoint, mu, mode, cfg,
                                        [derive_seed(seed, k, int(a), retry) for a in bad])
        ok = np.isfinite(dist)
        mean = float(dist[ok].mean()) if ok.any() else 0.0
        if mean < cfg.min_distance_m:
            return cfg.cost_cap, mean
        return min(cfg.horizon_s / mean, cfg.cost_cap), mean

    results = parallel_map(measure, range(len(grid_mu)), jobs)
    costs = np.array([c for c, _ in results])
    for mu, (c, d) in zip(grid_mu, results):
        logger.info("[COST] %s mu=%.3f mean distance %.2f m -> %.3f s/m", mode.label, mu, d, c)
    meta = {"n_agents": cfg.n_agents, "horizon_s": cfg.horizon_s, "command_speed": cfg.command_speed,
            "cost_cap": cfg.cost_cap, "policy": getattr(checkpoint, "policy_id", "unknown"), "seed": seed}
    return CostCurve(mode.label, grid_mu, costs, meta)


def cost_from_mu(mu, curve):
    """Piecewise-linear in mu, clamped to the curve's end values."""
    return np.interp(np.asarray(mu, dtype=np.float64), curve.mu_grid, curve.cost)


@dataclass
class CostMap:
    cost: np.ndarray  # (rows, cols) seconds per cell; inf = untraversable
    cell_m: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=np.float64)
        if np.any(np.isnan(self.cost)) or np.any(self.cost < 0):
            raise ContractViolation("Cost map cells must be non-negative (inf for untraversable).")

    @property
    def shape(self):
        return self.cost.shape

    def save(self, path):
        return write_grid(path, self.cost)

    @classmethod
    def load(cls, path, cell_m, provenance=None):
        return cls(np.array(read_grid(path), dtype=np.float64), cell_m, provenance or {})


def block_mean(values, factor):
    """Mean of finite values per factor x factor block (edge blocks may be partial); NaN if none."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    rows, cols = -(-h // factor), -(-w // factor)
    padded = np.full((rows * factor, cols * factor), np.nan)
    padded[:h, :w] = values
    blocks = padded.reshape(rows, factor, cols, factor)
    finite = np.isfinite(blocks)
    total = np.where(finite, blocks, 0.0).sum(axis=(1, 3))
    count = finite.sum(axis=(1, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def build_cost_map(mu_map, meters_per_pixel, curve, downsample=1, provenance=None):
    """Cell cost = cost_from_mu(block-mean mu) x cell edge length; all-invalid blocks are +inf."""
    if not meters_per_pixel > 0:
        raise ConfigurationError("meters_per_pixel must be positive.")
    mu_cells = block_mean(mu_map, int(downsample))
    cell_m = meters_per_pixel * downsample
    cost = np.full(mu_cells.shape, np.inf)
    ok = np.isfinite(mu_cells)
    cost[ok] = cost_from_mu(mu_cells[ok], curve) * cell_m
    prov = {"mode": curve.mode, "downsample": int(downsample), **(provenance or {})}
    return CostMap(cost, cell_m, prov), mu_cells
