"""Patch features and linear bin classifiers for per-pixel friction/roughness.

Each 8x8 patch becomes 16 numbers: RGB mean (3), RGB std (3), an 8-bin
magnitude-weighted gradient-orientation histogram of luminance (8) and
luminance local variance with 3x3 and 7x7 windows (2). Every feature is a
function of the patch's own pixels only: filters run on a reflect-padded copy
of each patch.
"""

import logging
import math
from dataclasses import dataclass, fields

import cv2
import numpy as np

from utils.errors import ContractViolation, VisionDataError
from utils.nn import (AdamState, Mlp, adam_step_net, backward, cross_entropy, forward, json_record,
                      load_checkpoint, read_json_record, save_checkpoint, softmax)
from utils.noise import derive_seed
from utils.settings import VISION_DEFAULTS

logger = logging.getLogger(__name__)

N_FEATURES = 16
_PAD = 3
_ORIENTATION_BINS = 8


@dataclass(frozen=True)
class VisionTrainConfig:
    patch_px: int = VISION_DEFAULTS["patch_px"]
    bins: int = VISION_DEFAULTS["bins"]
    lr: float = VISION_DEFAULTS["lr"]
    batch_size: int = VISION_DEFAULTS["batch_size"]
    epochs: int = VISION_DEFAULTS["epochs"]
    holdout_fraction: float = VISION_DEFAULTS["holdout_fraction"]
    mu_min: float = VISION_DEFAULTS["mu_min"]
    mu_max: float = VISION_DEFAULTS["mu_max"]
    rough_min: float = VISION_DEFAULTS["rough_min"]
    rough_max: float = VISION_DEFAULTS["rough_max"]

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (data or {}).items() if k in names})

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class BinSpec:
    lo: float
    hi: float
    n: int = 20

    @property
    def width(self):
        return (self.hi - self.lo) / self.n

    @property
    def edges(self):
        return np.linspace(self.lo, self.hi, self.n + 1)

    @property
    def centers(self):
        return self.lo + (np.arange(self.n) + 0.5) * self.width


def discretize(values, bins):
    """Bin index per value; out-of-range values clamp to the end bins, upper edge closed."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise VisionDataError("Cannot discretize non-finite label values.")
    idx = np.floor((values - bins.lo) / bins.width).astype(np.int64)
    return np.clip(idx, 0, bins.n - 1)


def expectation(probabilities, centers):
    return np.asarray(probabilities) @ np.asarray(centers)


# -- features ----------------------------------------------------------------------

def patch_grid_shape(height, width, patch=8):
    if height < patch or width < patch:
        raise VisionDataError(f"Image {width}x{height} is smaller than one {patch}x{patch} patch.")
    return height // patch, width // patch


def _mosaic(tiles):
    """(R, C, t, t) tiles -> (R*t, C*t) image."""
    r, c, t, _ = tiles.shape
    return tiles.transpose(0, 2, 1, 3).reshape(r * t, c * t)


def _unmosaic(image, r, c, t):
    return image.reshape(r, t, c, t).transpose(0, 2, 1, 3)


def patch_features(rgb, patch=8):
    """(R, C, 16) raw features of the full patches of an HxWx3 uint8 image."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ContractViolation(f"Expected an HxWx3 image, got shape {rgb.shape}.")
    rows, cols = patch_grid_shape(rgb.shape[0], rgb.shape[1], patch)
    img = rgb[:rows * patch, :cols * patch].astype(np.float32) / 255.0
    blocks = img.reshape(rows, patch, cols, patch, 3).transpose(0, 2, 1, 3, 4)  # (R, C, p, p, 3)
    mean = blocks.mean(axis=(2, 3))
    std = blocks.std(axis=(2, 3))

    lum = 0.299 * blocks[..., 0] + 0.587 * blocks[..., 1] + 0.114 * blocks[..., 2]  # (R, C, p, p)
    padded = np.pad(lum, ((0, 0), (0, 0), (_PAD, _PAD), (_PAD, _PAD)), mode="reflect")
    tile = patch + 2 * _PAD
    mosaic = np.ascontiguousarray(_mosaic(padded), dtype=np.float32)
    gx = _unmosaic(cv2.Sobel(mosaic, cv2.CV_32F, 1, 0, ksize=3), rows, cols, tile)
    gy = _unmosaic(cv2.Sobel(mosaic, cv2.CV_32F, 0, 1, ksize=3), rows, cols, tile)
    inner = (slice(None), slice(None), slice(_PAD, _PAD + patch), slice(_PAD, _PAD + patch))
    gx, gy = gx[inner], gy[inner]
    magnitude = np.sqrt(gx * gx + gy * gy)
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    bin_idx = np.minimum((angle / np.pi * _ORIENTATION_BINS).astype(np.int64), _ORIENTATION_BINS - 1)
    hist = np.stack([np.sum(magnitude * (bin_idx == b), axis=(2, 3)) for b in range(_ORIENTATION_BINS)], axis=-1)
    hist = hist / (hist.sum(axis=-1, keepdims=True) + 1e-6)

    variances = []
    for k in (3, 7):
        m1 = cv2.blur(mosaic, (k, k), borderType=cv2.BORDER_REFLECT_101)
        m2 = cv2.blur(mosaic * mosaic, (k, k), borderType=cv2.BORDER_REFLECT_101)
        local = np.maximum(_unmosaic(m2 - m1 * m1, rows, cols, tile)[inner], 0.0)
        variances.append(local.mean(axis=(2, 3)))
    return np.concatenate([mean, std, hist, np.stack(variances, axis=-1)], axis=-1).astype(np.float64)


def label_patch_index(u, v, grid_shape, patch=8):
    """Patch (row, col) owning pixel (u, v); remainder pixels map to the nearest full patch."""
    col = np.clip(np.floor(np.asarray(u) + 0.5).astype(np.int64) // patch, 0, grid_shape[1] - 1)
    row = np.clip(np.floor(np.asarray(v) + 0.5).astype(np.int64) // patch, 0, grid_shape[0] - 1)
    return row, col


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features):
        features = np.asarray(features, dtype=np.float64)
        return cls(features.mean(axis=0), np.maximum(features.std(axis=0), 1e-6))

    def apply(self, features):
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std


@dataclass
class VisionModel:
    """Feature standardisation plus independent mu and roughness heads."""

    stats: FeatureStats
    mu_head: Mlp
    rough_head: Mlp
    mu_bins: BinSpec
    rough_bins: BinSpec
    patch: int = 8

    def probabilities(self, features, which="mu"):
        head = self.mu_head if which == "mu" else self.rough_head
        return softmax(np.asarray(head(self.stats.apply(features)), dtype=np.float64))

    def save(self, path):
        meta = {"patch": self.patch, "mu_bins": [self.mu_bins.lo, self.mu_bins.hi, self.mu_bins.n],
                "rough_bins": [self.rough_bins.lo, self.rough_bins.hi, self.rough_bins.n]}
        return save_checkpoint(path, {"feature_mean": self.stats.mean, "feature_std": self.stats.std,
                                      "mu_head": self.mu_head, "rough_head": self.rough_head,
                                      "meta": json_record(meta)})

    @classmethod
    def load(cls, path):
        rec = load_checkpoint(path)
        meta = read_json_record(rec["meta"])
        return cls(FeatureStats(rec["feature_mean"], rec["feature_std"]), rec["mu_head"], rec["rough_head"],
                   BinSpec(*meta["mu_bins"]), BinSpec(*meta["rough_bins"]), meta["patch"])


def collect_samples(images, patch=8):
    """Per-label training samples: (features (K, 16), mu labels, rough labels, frame index)."""
    feats, mus, roughs, frames = [], [], [], []
    for i, im in enumerate(images):
        if not len(im.labels):
            continue
        f = patch_features(im.rgb, patch)
        row, col = label_patch_index(im.labels[:, 0], im.labels[:, 1], f.shape[:2], patch)
        feats.append(f[row, col])
        mus.append(im.labels[:, 2])
        roughs.append(im.labels[:, 3])
        frames.append(np.full(len(row), i))
    if not feats:
        raise VisionDataError("Dataset contains no labelled pixels.")
    return np.concatenate(feats), np.concatenate(mus), np.concatenate(roughs), np.concatenate(frames)


def split_frames(n_frames, holdout_fraction, seed):
    """Frame-level split; returns boolean validation mask over frame ids."""
    val = np.zeros(n_frames, dtype=bool)
    if n_frames >= 2 and holdout_fraction > 0:
        k = min(n_frames - 1, max(1, int(round(holdout_fraction * n_frames))))
        rng = np.random.default_rng(derive_seed(seed, 21))
        val[rng.permutation(n_frames)[:k]] = True
    return val


def train_head(features, targets, bins, cfg, seed, val_mask=None, name="mu"):
    """Trains a 16 -> n_bins linear softmax head with cross-entropy.

    features must already be standardised. Returns (head, curve rows of
    (epoch, train_loss, val_loss, val_accuracy)).
    """
    labels = discretize(targets, bins)
    val_mask = np.zeros(len(labels), dtype=bool) if val_mask is None else val_mask
    train_idx = np.flatnonzero(~val_mask)
    val_idx = np.flatnonzero(val_mask)
    distinct = np.unique(labels[train_idx]) if train_idx.size else np.zeros(0)
    if distinct.size < 2:
        raise VisionDataError(f"{name} labels fall into {distinct.size} bin(s); at least two distinct bins "
                              f"are needed to train a classifier.")
    rng = np.random.default_rng(derive_seed(seed, 22))
    head = Mlp([features.shape[1], bins.n], "linear", np.float64, rng)
    adam = AdamState.like(head.params, cfg.lr)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(train_idx)
        losses = []
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            logits, cache = forward(head, features[idx])
            loss, grad = cross_entropy(logits, labels[idx])
            g, _ = backward(head, cache, grad)
            adam_step_net(head, g, adam)
            losses.append(loss * len(idx))
        train_loss = float(np.sum(losses) / len(perm))
        val_loss = val_acc = float("nan")
        if val_idx.size:
            logits = head(features[val_idx])
            val_loss, _ = cross_entropy(logits, labels[val_idx])
            val_acc = float(np.mean(np.argmax(logits, axis=1) == labels[val_idx]))
        curve.append((epoch, train_loss, val_loss, val_acc))
        logger.debug("[VISION] %s epoch %d train=%.4f val=%.4f acc=%.3f", name, epoch, train_loss, val_loss,
                     val_acc)
    logger.info("[VISION] %s head: final train loss %.4f, val loss %.4f", name, curve[-1][1], curve[-1][2])
    return head, curve


def train_vision(images, cfg, seed):
    """Fits feature statistics and both heads; returns (VisionModel, curves dict, val frame mask)."""
    feats, mus, roughs, frames = collect_samples(images, cfg.patch_px)
    val_frames = split_frames(len(images), cfg.holdout_fraction, seed)
    val_mask = val_frames[frames]
    stats = FeatureStats.fit(feats[~val_mask] if (~val_mask).any() else feats)
    z = stats.apply(feats)
    mu_bins = BinSpec(cfg.mu_min, cfg.mu_max, cfg.bins)
    rough_bins = BinSpec(cfg.rough_min, cfg.rough_max, cfg.bins)
    mu_head, mu_curve = train_head(z, mus, mu_bins, cfg, seed, val_mask, "mu")
    rough_head, rough_curve = train_head(z, roughs, rough_bins, cfg, derive_seed(seed, 1), val_mask, "roughness")
    model = VisionModel(stats, mu_head, rough_head, mu_bins, rough_bins, cfg.patch_px)
    return model, {"mu": mu_curve, "rough": rough_curve}, val_frames


def predict_dense(image, model):
    """Per-pixel (mu, roughness) maps and per-patch mu bin probabilities."""
    h, w = image.shape[:2]
    feats = patch_features(image, model.patch)
    rows, cols = feats.shape[:2]
    flat = feats.reshape(-1, N_FEATURES)
    p_mu = model.probabilities(flat, "mu")
    p_rough = model.probabilities(flat, "rough")
    mu_patch = expectation(p_mu, model.mu_bins.centers).reshape(rows, cols)
    rough_patch = expectation(p_rough, model.rough_bins.centers).reshape(rows, cols)
    r_idx = np.minimum(np.arange(h) // model.patch, rows - 1)
    c_idx = np.minimum(np.arange(w) // model.patch, cols - 1)
    return (mu_patch[np.ix_(r_idx, c_idx)], rough_patch[np.ix_(r_idx, c_idx)],
            p_mu.reshape(rows, cols, -1))


def dense_rmse(prediction, truth):
    """RMSE over pixels whose ground truth is finite."""
    prediction = np.asarray(prediction, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    ok = np.isfinite(truth) & np.isfinite(prediction)
    if not ok.any():
        return float("nan")
    return float(math.sqrt(np.mean((prediction[ok] - truth[ok]) ** 2)))


CLASS_SUMMARY_COLUMNS = ("terrain_class", "source", "mean", "std", "count")


def class_summary(entries, class_names):
    """Per-class mean/std of values from several sources.

    entries: mapping source name -> (class ids, values). Rows follow class
    id order, then entry order.
    """
    rows = []
    ids = sorted(class_names)
    for cid in ids:
        for source, (classes, values) in entries.items():
            classes = np.asarray(classes)
            values = np.asarray(values, dtype=np.float64)
            sel = (classes == cid) & np.isfinite(values)
            if not sel.any():
                continue
            rows.append([class_names[cid], source, float(values[sel].mean()), float(values[sel].std()),
                         int(sel.sum())])
    return rows
