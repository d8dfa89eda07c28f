"""Synthetic cameras over the terrain texture and trajectory-to-pixel labelling.

World frame: x east, y north, z up; the ground is z = 0. A robot pose is
(x, y, psi). Pinhole cameras follow the usual image convention: u grows to
the right, v grows downwards, pixel (col, row) is centred on integer (u, v).
"""

import logging
import math
from dataclasses import dataclass, fields

import numpy as np

from utils.errors import ConfigurationError, ContractViolation
from utils.settings import CAMERA_DEFAULTS

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ("u", "v", "mu_hat", "rough_hat", "source_timestep", "mu_true", "rough_true")


@dataclass(frozen=True)
class PinholeCamera:
    fx: float = CAMERA_DEFAULTS["fx"]
    fy: float = CAMERA_DEFAULTS["fy"]
    cx: float = CAMERA_DEFAULTS["cx"]
    cy: float = CAMERA_DEFAULTS["cy"]
    width: int = CAMERA_DEFAULTS["width"]
    height: int = CAMERA_DEFAULTS["height"]
    mount_height_m: float = CAMERA_DEFAULTS["mount_height_m"]
    pitch_deg: float = CAMERA_DEFAULTS["pitch_deg"]
    mount_forward_m: float = CAMERA_DEFAULTS["mount_forward_m"]

    kind = "pinhole"

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError("Camera focal lengths must be positive.")
        if self.width < 1 or self.height < 1:
            raise ConfigurationError("Camera image size must be positive.")
        if not (0 <= self.cx <= self.width - 1 and 0 <= self.cy <= self.height - 1):
            raise ConfigurationError("Principal point must lie inside the image.")
        if not self.mount_height_m > 0:
            raise ConfigurationError("Camera must be mounted above the ground plane.")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (data or {}).items() if k in names})

    def to_dict(self):
        return {"kind": self.kind, **{f.name: getattr(self, f.name) for f in fields(self)}}

    def frame(self, pose):
        """Camera centre and world-frame (right, down, forward) axes for a robot pose."""
        x, y, psi = (float(c) for c in pose)
        c, s = math.cos(psi), math.sin(psi)
        pitch = math.radians(self.pitch_deg)
        centre = np.array([x + c * self.mount_forward_m, y + s * self.mount_forward_m, self.mount_height_m])
        forward = np.array([math.cos(pitch) * c, math.cos(pitch) * s, -math.sin(pitch)])
        right = np.array([s, -c, 0.0])
        down = np.cross(forward, right)
        return centre, right, down, forward

    def project(self, pose, points_xy):
        """Ground points (N, 2) -> (u, v, valid); invalid means behind the camera or out of frame."""
        pts = np.atleast_2d(np.asarray(points_xy, dtype=np.float64))
        centre, right, down, forward = self.frame(pose)
        rel = np.column_stack([pts[:, 0] - centre[0], pts[:, 1] - centre[1], np.full(len(pts), -centre[2])])
        zc = rel @ forward
        front = zc > 1e-9
        safe = np.where(front, zc, 1.0)
        u = self.fx * (rel @ right) / safe + self.cx
        v = self.fy * (rel @ down) / safe + self.cy
        inside = (u >= -0.5) & (u < self.width - 0.5) & (v >= -0.5) & (v < self.height - 0.5)
        return u, v, front & inside

    def rays(self, pose, u, v):
        centre, right, down, forward = self.frame(pose)
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d = (((u - self.cx) / self.fx)[..., None] * right + ((v - self.cy) / self.fy)[..., None] * down
             + forward)
        return centre, d

    def back_project(self, pose, u, v):
        """Pixel coordinates -> ground point (..., 2); NaN where the ray misses the ground."""
        centre, d = self.rays(pose, u, v)
        dz = d[..., 2]
        hit = dz < -1e-12
        t = np.where(hit, -centre[2] / np.where(hit, dz, -1.0), np.nan)
        return np.stack([centre[0] + t * d[..., 0], centre[1] + t * d[..., 1]], axis=-1)


@dataclass(frozen=True)
class OrthoCamera:
    """Overhead orthographic view of the window [x0, x0 + w/ppm) x [y0, y0 + h/ppm)."""

    px_per_m: float
    width: int
    height: int
    x0: float = 0.0
    y0: float = 0.0

    kind = "ortho"

    def __post_init__(self):
        if not self.px_per_m > 0 or self.width < 1 or self.height < 1:
            raise ConfigurationError("Orthographic camera needs positive resolution and size.")

    @classmethod
    def covering(cls, grid, px_per_m):
        ex, ey = grid.extent
        return cls(float(px_per_m), int(round(ex * px_per_m)), int(round(ey * px_per_m)))

    def to_dict(self):
        return {"kind": self.kind, **{f.name: getattr(self, f.name) for f in fields(self)}}

    @property
    def meters_per_pixel(self):
        return 1.0 / self.px_per_m

    def project(self, pose, points_xy):
        pts = np.atleast_2d(np.asarray(points_xy, dtype=np.float64))
        u = (pts[:, 0] - self.x0) * self.px_per_m - 0.5
        v = (pts[:, 1] - self.y0) * self.px_per_m - 0.5
        inside = (u >= -0.5) & (u < self.width - 0.5) & (v >= -0.5) & (v < self.height - 0.5)
        return u, v, inside

    def back_project(self, pose, u, v):
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        return np.stack([(u + 0.5) / self.px_per_m + self.x0, (v + 0.5) / self.px_per_m + self.y0], axis=-1)


def _pixel_grid(camera):
    v, u = np.mgrid[0:camera.height, 0:camera.width].astype(np.float64)
    return u, v


def sample_texture(texture, texture_ppm, ground_xy, void_color):
    """Nearest texture sample at ground points; NaN or off-texture points get void_color."""
    h, w = texture.shape[:2]
    x = ground_xy[..., 0]
    y = ground_xy[..., 1]
    finite = np.isfinite(x) & np.isfinite(y)
    col = np.floor(np.where(finite, x, -1.0) * texture_ppm).astype(np.int64)
    row = np.floor(np.where(finite, y, -1.0) * texture_ppm).astype(np.int64)
    ok = finite & (col >= 0) & (col < w) & (row >= 0) & (row < h)
    out = np.empty(x.shape + (3,), dtype=np.uint8)
    out[...] = np.asarray(void_color, dtype=np.uint8)
    out[ok] = texture[row[ok], col[ok]]
    return out, ok


def render_pinhole(texture, texture_ppm, camera, pose, sky_color=CAMERA_DEFAULTS["sky_color"],
                   void_color=CAMERA_DEFAULTS["void_color"]):
    """Ray-casts every pixel to z = 0 and samples the overhead texture.

    Rays that never reach the ground get sky_color; ground points outside the
    world get void_color.
    """
    u, v = _pixel_grid(camera)
    ground = camera.back_project(pose, u, v)
    image, _ = sample_texture(texture, texture_ppm, ground, void_color)
    sky = ~np.isfinite(ground[..., 0])
    image[sky] = np.asarray(sky_color, dtype=np.uint8)
    return image


def render_ortho(texture, texture_ppm, camera, void_color=CAMERA_DEFAULTS["void_color"]):
    u, v = _pixel_grid(camera)
    image, _ = sample_texture(texture, texture_ppm, camera.back_project(None, u, v), void_color)
    return image


def ground_truth_map(grid, camera, pose=None):
    """Per-pixel true (mu, roughness) of the ground seen by `camera`; NaN off-world or sky."""
    u, v = _pixel_grid(camera)
    ground = camera.back_project(pose, u, v)
    mu = np.full(u.shape, np.nan)
    rough = np.full(u.shape, np.nan)
    ok = np.isfinite(ground[..., 0]) & grid.contains(np.nan_to_num(ground, nan=-1.0))
    if ok.any():
        pts = ground[ok]
        col = np.minimum((pts[:, 0] / grid.cell_size_m).astype(np.int64), grid.width - 1)
        row = np.minimum((pts[:, 1] / grid.cell_size_m).astype(np.int64), grid.height - 1)
        mu[ok] = grid.mu[row, col]
        rough[ok] = grid.roughness[row, col]
    return mu, rough


def class_map(grid, camera, pose=None):
    """Per-pixel terrain class id seen by `camera`; -1 off-world or sky."""
    u, v = _pixel_grid(camera)
    ground = camera.back_project(pose, u, v)
    out = np.full(u.shape, -1, dtype=np.int64)
    ok = np.isfinite(ground[..., 0]) & grid.contains(np.nan_to_num(ground, nan=-1.0))
    if ok.any():
        pts = ground[ok]
        col = np.minimum((pts[:, 0] / grid.cell_size_m).astype(np.int64), grid.width - 1)
        row = np.minimum((pts[:, 1] / grid.cell_size_m).astype(np.int64), grid.height - 1)
        out[ok] = grid.class_id[row, col]
    return out


@dataclass
class OdometryTrack:
    """Estimated and true robot poses (T, 3) of one trajectory; est[0] == true[0]."""

    estimated: np.ndarray
    true: np.ndarray

    def __post_init__(self):
        self.estimated = np.asarray(self.estimated, dtype=np.float64)
        self.true = np.asarray(self.true, dtype=np.float64)
        if self.estimated.shape != self.true.shape:
            raise ContractViolation("Estimated and true poses are misaligned.")

    def __len__(self):
        return len(self.true)

    def drift(self):
        return np.linalg.norm(self.estimated[:, :2] - self.true[:, :2], axis=1)

    def window_drift(self, steps):
        """Largest drift accumulated over any window of `steps` poses, re-anchored at its start."""
        if len(self) <= steps:
            steps = len(self) - 1
        if steps < 1:
            return 0.0
        worst = 0.0
        for i in range(0, len(self) - steps, max(1, steps // 4)):
            rel_est = relative_points(self.estimated[i], self.estimated[i + steps:i + steps + 1, :2])
            rel_true = relative_points(self.true[i], self.true[i + steps:i + steps + 1, :2])
            worst = max(worst, float(np.linalg.norm(rel_est - rel_true)))
        return worst


def relative_points(pose, points_xy):
    """World points expressed in the frame of `pose` (x forward, y left)."""
    x, y, psi = pose
    c, s = math.cos(psi), math.sin(psi)
    d = np.asarray(points_xy, dtype=np.float64) - np.array([x, y])
    return np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]])


def project_traversal(track, estimates, camera, capture_index, min_range_m=1.0, max_range_m=5.0, grid=None):
    """Labels for the frame captured at `capture_index` from the robot's own traversal.

    Every pose (past or future) whose estimated planar distance from the
    capture pose lies in [min_range_m, max_range_m] is projected using the
    ESTIMATED relative pose. Returns a float array with LABEL_COLUMNS; the
    ground-truth columns are filled from `grid` (via the true capture pose)
    when given, else NaN.
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    n = min(len(track), len(estimates))
    if len(estimates) > len(track):
        raise ContractViolation("More estimates than poses in the track.")
    if n == 0:
        return np.zeros((0, len(LABEL_COLUMNS)))
    anchor = track.estimated[capture_index]
    rel = relative_points(anchor, track.estimated[:n, :2])
    dist = np.linalg.norm(rel, axis=1)
    keep = (dist >= min_range_m) & (dist <= max_range_m)
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return np.zeros((0, len(LABEL_COLUMNS)))
    u, v, valid = camera.project((0.0, 0.0, 0.0), rel[idx])
    idx, u, v = idx[valid], u[valid], v[valid]
    labels = np.full((idx.size, len(LABEL_COLUMNS)), np.nan)
    labels[:, 0] = u
    labels[:, 1] = v
    labels[:, 2] = estimates[idx, 0]
    labels[:, 3] = estimates[idx, 1]
    labels[:, 4] = idx
    if grid is not None and idx.size:
        ground = camera.back_project(track.true[capture_index], u, v)
        ok = grid.contains(np.nan_to_num(ground, nan=-1.0)) & np.isfinite(ground[:, 0])
        if ok.any():
            pts = ground[ok]
            col = np.minimum((pts[:, 0] / grid.cell_size_m).astype(np.int64), grid.width - 1)
            row = np.minimum((pts[:, 1] / grid.cell_size_m).astype(np.int64), grid.height - 1)
            labels[ok, 5] = grid.mu[row, col]
            labels[ok, 6] = grid.roughness[row, col]
    return labels


@dataclass
class LabeledImage:
    rgb: np.ndarray
    labels: np.ndarray  # (K, len(LABEL_COLUMNS))
    meta: dict

    def __post_init__(self):
        h, w = self.rgb.shape[:2]
        if len(self.labels):
            u, v = self.labels[:, 0], self.labels[:, 1]
            if np.any(u < -0.5) or np.any(u >= w - 0.5) or np.any(v < -0.5) or np.any(v >= h - 0.5):
                raise ContractViolation("Label pixel outside image bounds.")


class OracleEstimator:
    """Stands in for a learned estimator: reports ground truth terrain and odometry."""

    @staticmethod
    def estimates(e_true):
        return np.asarray(e_true, dtype=np.float64).copy()

    @staticmethod
    def poses(true_poses):
        return np.asarray(true_poses, dtype=np.float64).copy()
