import logging
import re
from dataclasses import dataclass, field, replace

import numpy as np

from utils.errors import ConfigurationError, DomainError
from utils.nn import json_record, load_checkpoint, read_json_record, save_checkpoint
from utils.noise import derive_seed, fbm, value_noise
from utils.settings import read_ini

logger = logging.getLogger(__name__)

MU_LIMITS = (0.25, 3.0)
ROUGH_LIMITS = (0.0, 1.0)
DEFAULT_CELL_SIZE_M = 0.25
# lattice spacing (cells) of the smoothing field; quintic fade keeps
# neighbouring cells within 1.875 / 24 < 10 % of the class range
PARAM_LATTICE_CELLS = 24.0
MIN_WORLD_EXTENT_M = 2.0

_MU_CHANNEL = 1
_ROUGH_CHANNEL = 2


def hex_to_rgb(hex_string):
    """Converts an #RRGGBB hex string to an (R, G, B) tuple."""
    hex_color = str(hex_string).strip().lstrip("#")
    if len(hex_color) != 6:
        raise ConfigurationError(f"Invalid colour '{hex_string}', expected #RRGGBB.")
    try:
        return tuple(int(hex_color[i:i + 2], 16) for i in (0, 2, 4))
    except ValueError:
        raise ConfigurationError(f"Invalid colour '{hex_string}', expected #RRGGBB.")


def rgb_to_hex(rgb):
    r, g, b = [max(0, min(255, int(c))) for c in rgb]
    return f"#{r:02x}{g:02x}{b:02x}"


@dataclass(frozen=True)
class TerrainClass:
    id: int
    name: str
    mu_range: tuple
    rough_range: tuple
    palette: tuple
    texture_scale: float = 4.0

    def __post_init__(self):
        lo, hi = self.mu_range
        if not (MU_LIMITS[0] <= lo <= hi <= MU_LIMITS[1]):
            raise ConfigurationError(
                f"Class '{self.name}': mu_range {self.mu_range} must lie inside {MU_LIMITS}.")
        lo, hi = self.rough_range
        if not (ROUGH_LIMITS[0] <= lo <= hi <= ROUGH_LIMITS[1]):
            raise ConfigurationError(
                f"Class '{self.name}': rough_range {self.rough_range} must lie inside {ROUGH_LIMITS}.")
        if len(self.palette) != 3 or any(len(c) != 3 for c in self.palette):
            raise ConfigurationError(f"Class '{self.name}': palette needs exactly 3 RGB colours.")
        if not self.texture_scale > 0:
            raise ConfigurationError(f"Class '{self.name}': texture_scale must be positive.")

    @property
    def mu_center(self):
        return 0.5 * (self.mu_range[0] + self.mu_range[1])

    def to_dict(self):
        return {
            "id": self.id,
            "name": self.name,
            "mu_range": list(self.mu_range),
            "rough_range": list(self.rough_range),
            "palette": [rgb_to_hex(c) for c in self.palette],
            "texture_scale": self.texture_scale,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["id"]), data["name"], tuple(float(v) for v in data["mu_range"]),
                   tuple(float(v) for v in data["rough_range"]),
                   tuple(hex_to_rgb(c) if isinstance(c, str) else tuple(int(v) for v in c)
                         for c in data["palette"]),
                   float(data.get("texture_scale", 4.0)))


# Ranges only echo the measured ordering grass > pavement > dirt ~ gravel.
DEFAULT_CLASSES = {
    "grass": TerrainClass(0, "grass", (1.7, 2.1), (0.2, 0.4),
                          ((72, 122, 52), (104, 150, 70), (46, 86, 36)), 7.0),
    "pavement": TerrainClass(1, "pavement", (1.2, 1.5), (0.0, 0.1),
                             ((112, 112, 116), (134, 134, 138), (90, 90, 94)), 1.5),
    "dirt": TerrainClass(2, "dirt", (0.75, 1.05), (0.3, 0.5),
                         ((139, 104, 72), (118, 86, 58), (160, 128, 96)), 3.0),
    "gravel": TerrainClass(3, "gravel", (0.7, 1.1), (0.6, 0.9),
                           ((150, 144, 128), (110, 104, 94), (196, 190, 176)), 12.0),
}

# Fixed-friction classes for the four-quadrant vision evaluation world.
QUADRANT_CLASSES = {
    "ice": TerrainClass(10, "ice", (0.25, 0.25), (0.0, 0.0),
                        ((208, 226, 240), (180, 206, 228), (240, 248, 255)), 1.0),
    "quad_gravel": TerrainClass(11, "quad_gravel", (1.17, 1.17), (0.5, 0.5),
                                ((150, 144, 128), (110, 104, 94), (196, 190, 176)), 12.0),
    "brick": TerrainClass(12, "brick", (2.08, 2.08), (0.2, 0.2),
                          ((160, 70, 52), (128, 52, 40), (190, 150, 130)), 2.5),
    "meadow": TerrainClass(13, "meadow", (3.0, 3.0), (0.3, 0.3),
                           ((60, 130, 44), (90, 160, 60), (36, 90, 28)), 7.0),
}

BUILTIN_CLASSES = {**DEFAULT_CLASSES, **QUADRANT_CLASSES}


@dataclass(frozen=True)
class Region:
    terrain_class: TerrainClass
    polygon: tuple  # ((x, y), ...) in metres

    @classmethod
    def rect(cls, terrain_class, x0, y0, x1, y1):
        return cls(terrain_class, ((x0, y0), (x1, y0), (x1, y1), (x0, y1)))


@dataclass(frozen=True)
class WorldSpec:
    name: str
    width: int
    height: int
    regions: tuple
    cell_size_m: float = DEFAULT_CELL_SIZE_M
    seed: int = 0
    fill: TerrainClass = None

    def to_dict(self):
        return {
            "name": self.name,
            "width": self.width,
            "height": self.height,
            "cell_size_m": self.cell_size_m,
            "seed": self.seed,
            "fill": self.fill.name if self.fill else None,
            "regions": [{"class": r.terrain_class.name, "polygon": [list(p) for p in r.polygon]}
                        for r in self.regions],
            "classes": {c.name: c.to_dict() for c in self.classes()},
        }

    def classes(self):
        found = {r.terrain_class.id: r.terrain_class for r in self.regions}
        if self.fill is not None:
            found[self.fill.id] = self.fill
        return [found[k] for k in sorted(found)]


@dataclass
class TerrainGrid:
    width: int
    height: int
    cell_size_m: float
    class_id: np.ndarray  # (height, width) int16, indexed [row=y, col=x]
    mu: np.ndarray
    roughness: np.ndarray
    seed: int
    classes: dict = field(default_factory=dict)  # id -> TerrainClass
    name: str = ""

    @property
    def extent(self):
        return (self.width * self.cell_size_m, self.height * self.cell_size_m)

    def contains(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        ex, ey = self.extent
        return (xy[..., 0] >= 0.0) & (xy[..., 0] < ex) & (xy[..., 1] >= 0.0) & (xy[..., 1] < ey)

    def cell_index(self, xy):
        """Row/col of the cell owning [x, x + cell) x [y, y + cell)."""
        xy = np.asarray(xy, dtype=np.float64)
        if not np.all(self.contains(xy)):
            raise DomainError(f"Position outside world extent {self.extent}: {xy.tolist()}")
        col = np.floor(xy[..., 0] / self.cell_size_m).astype(np.int64)
        row = np.floor(xy[..., 1] / self.cell_size_m).astype(np.int64)
        return np.minimum(row, self.height - 1), np.minimum(col, self.width - 1)

    def with_mu(self, mu):
        return replace(self, mu=_frozen(np.asarray(mu, dtype=np.float64)))

    def summary(self):
        rows = []
        for cid in sorted(self.classes):
            mask = self.class_id == cid
            if not mask.any():
                continue
            rows.append({
                "class": self.classes[cid].name,
                "cells": int(mask.sum()),
                "mu_mean": float(self.mu[mask].mean()),
                "rough_mean": float(self.roughness[mask].mean()),
            })
        return rows


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


def _points_in_polygon(px, py, polygon):
    """Even-odd rule; a point on an edge shared by two polygons lands in exactly one."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(polygon)
    j = n - 1
    for i in range(n):
        xi, yi = polygon[i]
        xj, yj = polygon[j]
        crosses = (yi > py) != (yj > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = (xj - xi) * (py - yi) / (yj - yi) + xi
        inside ^= crosses & (px < x_cross)
        j = i
    return inside


def _smooth_field(shape, seed, class_id, channel):
    rows, cols = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    key = derive_seed(seed, class_id, channel)
    return value_noise(cols / PARAM_LATTICE_CELLS, rows / PARAM_LATTICE_CELLS, key)


def generate_world(spec, seed=None):
    """Rasterises a WorldSpec's regions into a grid and samples per-cell physics."""
    seed = spec.seed if seed is None else int(seed)
    if not spec.regions and spec.fill is None:
        raise ConfigurationError(f"World '{spec.name}' has no terrain classes.")
    if spec.width <= 0 or spec.height <= 0 or not spec.cell_size_m > 0:
        raise ConfigurationError(f"World '{spec.name}' has a non-positive size.")

    rows, cols = np.mgrid[0:spec.height, 0:spec.width]
    cx = (cols + 0.5) * spec.cell_size_m
    cy = (rows + 0.5) * spec.cell_size_m
    class_id = np.full((spec.height, spec.width), -1, dtype=np.int16)
    classes = {}
    for index, region in enumerate(spec.regions):
        tc = region.terrain_class
        known = classes.get(tc.id)
        if known is not None and known != tc:
            raise ConfigurationError(f"Two different classes share id {tc.id} ('{known.name}', '{tc.name}').")
        classes[tc.id] = tc
        mask = _points_in_polygon(cx, cy, region.polygon)
        clash = mask & (class_id >= 0) & (class_id != tc.id)
        if clash.any():
            r, c = np.argwhere(clash)[0]
            other = classes[int(class_id[r, c])].name
            raise ConfigurationError(
                f"World '{spec.name}': region {index} ('{tc.name}') overlaps '{other}' at cell (row {r}, col {c}).")
        class_id[mask] = tc.id

    if spec.fill is not None:
        known = classes.get(spec.fill.id)
        if known is not None and known != spec.fill:
            raise ConfigurationError(f"Fill class '{spec.fill.name}' reuses id {spec.fill.id}.")
        classes[spec.fill.id] = spec.fill
        class_id[class_id < 0] = spec.fill.id

    if (class_id < 0).any():
        r, c = np.argwhere(class_id < 0)[0]
        raise ConfigurationError(
            f"World '{spec.name}': regions do not cover the grid (first gap at row {r}, col {c}).")

    mu = np.zeros(class_id.shape, dtype=np.float64)
    rough = np.zeros(class_id.shape, dtype=np.float64)
    for cid, tc in classes.items():
        mask = class_id == cid
        if not mask.any():
            continue
        mu_field = _smooth_field(class_id.shape, seed, cid, _MU_CHANNEL)
        rough_field = _smooth_field(class_id.shape, seed, cid, _ROUGH_CHANNEL)
        lo, hi = tc.mu_range
        mu[mask] = lo + (hi - lo) * mu_field[mask]
        lo, hi = tc.rough_range
        rough[mask] = lo + (hi - lo) * rough_field[mask]
        # degenerate ranges must come out exact
        if tc.mu_range[0] == tc.mu_range[1]:
            mu[mask] = tc.mu_range[0]
        if tc.rough_range[0] == tc.rough_range[1]:
            rough[mask] = tc.rough_range[0]

    logger.debug("[WORLD] Generated '%s' %dx%d cells (seed %d, %d classes).",
                 spec.name, spec.width, spec.height, seed, len(classes))
    return TerrainGrid(spec.width, spec.height, spec.cell_size_m, _frozen(class_id), _frozen(mu),
                       _frozen(rough), seed, dict(sorted(classes.items())), spec.name)


def uniform_world(mu, roughness=0.0, size_m=60.0, cell_size_m=DEFAULT_CELL_SIZE_M, name=None):
    """Single-class world with fixed physics, used for cost-curve rollouts."""
    tc = TerrainClass(99, name or f"uniform_{mu:g}", (mu, mu), (roughness, roughness),
                      ((128, 128, 128), (120, 120, 120), (136, 136, 136)), 1.0)
    cells = int(round(size_m / cell_size_m))
    spec = WorldSpec(tc.name, cells, cells, (), cell_size_m, 0, fill=tc)
    return generate_world(spec)


def query_params(grid, position):
    """(mu, roughness) of the cell containing `position`; DomainError outside the world."""
    row, col = grid.cell_index(position)
    return float(grid.mu[row, col]), float(grid.roughness[row, col])


def query_params_many(grid, xy):
    row, col = grid.cell_index(xy)
    return grid.mu[row, col], grid.roughness[row, col]


def _class_colors(tc, wx, wy, seed):
    """Palette colours of class `tc` at world points (metres)."""
    key = derive_seed(seed, tc.id)
    f = tc.texture_scale
    base = fbm(wx * f, wy * f, key, octaves=3)[..., None]
    speckle = value_noise(wx * f * 4.0, wy * f * 4.0, derive_seed(key, 1))[..., None]
    p0, p1, p2 = (np.asarray(c, dtype=np.float64) for c in tc.palette)
    color = p0 + (p1 - p0) * base
    mix = np.clip((speckle - 0.7) / 0.3, 0.0, 1.0)
    return color + (p2 - color) * mix


def render_texture(grid, resolution_px_per_m, seed):
    """Overhead orthographic RGB image; row r / col c covers world y, x in [r, r+1) / ppm."""
    if not resolution_px_per_m > 0:
        raise ConfigurationError("Texture resolution must be positive.")
    ex, ey = grid.extent
    w_px = int(round(ex * resolution_px_per_m))
    h_px = int(round(ey * resolution_px_per_m))
    rows, cols = np.mgrid[0:h_px, 0:w_px].astype(np.float64)
    wx = (cols + 0.5) / resolution_px_per_m
    wy = (rows + 0.5) / resolution_px_per_m
    cell_col = np.minimum((wx / grid.cell_size_m).astype(np.int64), grid.width - 1)
    cell_row = np.minimum((wy / grid.cell_size_m).astype(np.int64), grid.height - 1)
    pixel_class = grid.class_id[cell_row, cell_col]
    image = np.zeros((h_px, w_px, 3), dtype=np.float64)
    for cid, tc in grid.classes.items():
        mask = pixel_class == cid
        if mask.any():
            image[mask] = _class_colors(tc, wx[mask], wy[mask], seed)
    return np.clip(np.round(image), 0, 255).astype(np.uint8)


_REGION_RE = re.compile(r"^\s*(?P<cls>[\w\-]+)\s*:\s*(?P<kind>rect|poly)\s+(?P<coords>.+)$")


def _parse_pair(text, name):
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 2:
        raise ConfigurationError(f"'{name}' needs two comma-separated numbers, got '{text}'.")
    return tuple(float(p) for p in parts)


def _parse_class(name, values):
    try:
        palette = tuple(hex_to_rgb(c) for c in values["palette"].split(","))
        return TerrainClass(int(values["id"]), name, _parse_pair(values["mu_range"], "mu_range"),
                            _parse_pair(values["rough_range"], "rough_range"), palette,
                            float(values.get("texture_scale", 4.0)))
    except KeyError as e:
        raise ConfigurationError(f"Class '{name}' is missing key {e}.")


def _parse_region(text, classes, world):
    m = _REGION_RE.match(text)
    if not m:
        raise ConfigurationError(f"World '{world}': cannot parse region '{text}'.")
    cls_name = m.group("cls")
    if cls_name not in classes:
        raise ConfigurationError(f"World '{world}': unknown class '{cls_name}'.")
    coords = [float(v) for v in m.group("coords").replace(",", " ").split()]
    if m.group("kind") == "rect":
        if len(coords) != 4:
            raise ConfigurationError(f"World '{world}': rect needs x0 y0 x1 y1, got '{text}'.")
        x0, y0, x1, y1 = coords
        return Region.rect(classes[cls_name], min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
    if len(coords) < 6 or len(coords) % 2:
        raise ConfigurationError(f"World '{world}': poly needs at least three x y pairs, got '{text}'.")
    return Region(classes[cls_name], tuple(zip(coords[0::2], coords[1::2])))


def load_world_specs(path):
    """Parses a world spec file into {world name: WorldSpec}.

    Classes are declared in `[class NAME]` sections; the built-in classes can
    be referenced without declaring them. See README.md for the schema.
    """
    sections = read_ini(path)
    classes = dict(BUILTIN_CLASSES)
    for section, values in sections.items():
        kind, _, name = section.partition(" ")
        if kind == "class":
            classes[name.strip()] = _parse_class(name.strip(), values)

    worlds = {}
    for section, values in sections.items():
        kind, _, name = section.partition(" ")
        name = name.strip()
        if kind == "class":
            continue
        if kind != "world":
            logger.warning("[WORLD] Unknown section [%s] in %s; ignored.", section, path)
            continue
        try:
            width, height = int(values["width"]), int(values["height"])
        except (KeyError, ValueError):
            raise ConfigurationError(f"World '{name}' needs integer 'width' and 'height' (cells).")
        region_keys = sorted((k for k in values if k.startswith("region")),
                             key=lambda k: (len(k), k))
        regions = tuple(_parse_region(values[k], classes, name) for k in region_keys)
        fill = None
        if "fill" in values:
            fill_name = values["fill"].strip()
            if fill_name not in classes:
                raise ConfigurationError(f"World '{name}': unknown fill class '{fill_name}'.")
            fill = classes[fill_name]
        worlds[name] = WorldSpec(name, width, height, regions,
                                 float(values.get("cell_size", DEFAULT_CELL_SIZE_M)),
                                 int(values.get("seed", 0)), fill)
    if not worlds:
        raise ConfigurationError(f"No [world ...] sections found in {path}.")
    return worlds


def save_grid(grid, path):
    """Writes a grid in the checkpoint container (byte-stable across runs)."""
    meta = {
        "name": grid.name,
        "width": grid.width,
        "height": grid.height,
        "cell_size_m": grid.cell_size_m,
        "seed": grid.seed,
        "classes": [tc.to_dict() for tc in grid.classes.values()],
    }
    return save_checkpoint(path, {"class_id": np.asarray(grid.class_id, dtype=np.int64),
                                  "mu": np.asarray(grid.mu, dtype=np.float64),
                                  "roughness": np.asarray(grid.roughness, dtype=np.float64),
                                  "meta": json_record(meta)})


def load_grid(path):
    rec = load_checkpoint(path)
    meta = read_json_record(rec["meta"])
    classes = {int(d["id"]): TerrainClass.from_dict(d) for d in meta["classes"]}
    return TerrainGrid(meta["width"], meta["height"], meta["cell_size_m"],
                       _frozen(rec["class_id"].astype(np.int16)), _frozen(rec["mu"]), _frozen(rec["roughness"]),
                       meta["seed"], classes, meta["name"])


def check_world_size(grid):
    ex, ey = grid.extent
    if ex < MIN_WORLD_EXTENT_M or ey < MIN_WORLD_EXTENT_M:
        raise ConfigurationError(
            f"World '{grid.name}' is {ex:g} m x {ey:g} m; at least "
            f"{MIN_WORLD_EXTENT_M:g} m x {MIN_WORLD_EXTENT_M:g} m is required.")


def distinct_mu_count(grids, decimals=6):
    values = set()
    for g in grids:
        values.update(np.round(np.unique(g.mu), decimals).tolist())
    return len(values)
