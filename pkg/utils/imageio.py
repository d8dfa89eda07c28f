from pathlib import Path

import cv2
import numpy as np
from PIL import Image


def write_ppm(path, rgb):
    """Writes an HxWx3 uint8 image as binary PPM (P6, maxval 255)."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {rgb.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, mode="RGB").save(path, format="PPM")
    return path


def read_ppm(path):
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def colorize(values, vmin, vmax, invalid_color=(0, 0, 0)):
    """False-colour rendering of a scalar map (viridis); NaN/inf pixels get invalid_color."""
    values = np.asarray(values, dtype=np.float64)
    valid = np.isfinite(values)
    span = max(vmax - vmin, 1e-12)
    scaled = np.zeros(values.shape, dtype=np.uint8)
    scaled[valid] = np.clip((values[valid] - vmin) / span * 255.0, 0, 255).astype(np.uint8)
    bgr = cv2.applyColorMap(scaled, cv2.COLORMAP_VIRIDIS)
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    rgb[~valid] = invalid_color
    return rgb


def draw_polyline(rgb, points_xy, color=(255, 40, 40), thickness=1):
    """Returns a copy of the image with a polyline through pixel points (x=col, y=row)."""
    out = np.ascontiguousarray(rgb, dtype=np.uint8).copy()
    if len(points_xy) < 2:
        return out
    pts = np.round(np.asarray(points_xy, dtype=np.float64)).astype(np.int32).reshape(-1, 1, 2)
    cv2.polylines(out, [pts], isClosed=False, color=tuple(int(c) for c in color),
                  thickness=thickness, lineType=cv2.LINE_8)
    return out
