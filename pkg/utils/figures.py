"""SVG line charts and path overlays, written as plain text."""

import logging
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

logger = logging.getLogger(__name__)

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 64, "right": 150, "top": 36, "bottom": 48}
N_TICKS = 5


def _fmt(x):
    return f"{x:.2f}"


def _range(values):
    values = np.asarray([v for v in values if np.isfinite(v)], dtype=np.float64)
    if values.size == 0:
        return 0.0, 1.0
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-12:
        pad = max(abs(lo) * 0.05, 0.5)
        return lo - pad, hi + pad
    return lo, hi


class LineChart:
    """Collects named series and renders them on shared axes."""

    def __init__(self, title, x_label, y_label):
        self.title = title
        self.x_label = x_label
        self.y_label = y_label
        self.series = []

    def add(self, name, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape:
            raise ValueError(f"series '{name}': x and y lengths differ ({x.size} vs {y.size})")
        self.series.append((name, x, y))
        return self

    def to_svg(self):
        x_lo, x_hi = _range(np.concatenate([s[1] for s in self.series]) if self.series else [])
        y_lo, y_hi = _range(np.concatenate([s[2] for s in self.series]) if self.series else [])
        plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
        plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

        def sx(x):
            return MARGIN["left"] + (x - x_lo) / (x_hi - x_lo) * plot_w

        def sy(y):
            return MARGIN["top"] + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
            f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15" '
            f'font-family="sans-serif">{escape(self.title)}</text>',
            f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{plot_w}" height="{plot_h}" '
            f'fill="none" stroke="#444"/>',
        ]
        for k in range(N_TICKS + 1):
            xv = x_lo + (x_hi - x_lo) * k / N_TICKS
            yv = y_lo + (y_hi - y_lo) * k / N_TICKS
            px, py = sx(xv), sy(yv)
            parts.append(f'<line x1="{_fmt(px)}" y1="{MARGIN["top"] + plot_h}" x2="{_fmt(px)}" '
                         f'y2="{MARGIN["top"] + plot_h + 5}" stroke="#444"/>')
            parts.append(f'<text x="{_fmt(px)}" y="{MARGIN["top"] + plot_h + 18}" text-anchor="middle" '
                         f'font-size="11" font-family="sans-serif">{xv:.3g}</text>')
            parts.append(f'<line x1="{MARGIN["left"] - 5}" y1="{_fmt(py)}" x2="{MARGIN["left"]}" '
                         f'y2="{_fmt(py)}" stroke="#444"/>')
            parts.append(f'<text x="{MARGIN["left"] - 8}" y="{_fmt(py + 4)}" text-anchor="end" '
                         f'font-size="11" font-family="sans-serif">{yv:.3g}</text>')
        parts.append(f'<text x="{MARGIN["left"] + plot_w / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" '
                     f'font-size="12" font-family="sans-serif">{escape(self.x_label)}</text>')
        parts.append(f'<text x="16" y="{MARGIN["top"] + plot_h / 2:.1f}" text-anchor="middle" font-size="12" '
                     f'font-family="sans-serif" transform="rotate(-90 16 {MARGIN["top"] + plot_h / 2:.1f})">'
                     f'{escape(self.y_label)}</text>')

        for i, (name, x, y) in enumerate(self.series):
            color = PALETTE[i % len(PALETTE)]
            ok = np.isfinite(x) & np.isfinite(y)
            pts = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x[ok], y[ok]))
            if pts:
                parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
            ly = MARGIN["top"] + 14 + 18 * i
            lx = WIDTH - MARGIN["right"] + 12
            parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" '
                         f'stroke-width="2"/>')
            parts.append(f'<text x="{lx + 24}" y="{ly}" font-size="11" font-family="sans-serif">'
                         f'{escape(name)}</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_svg())
        logger.debug("[FIG] Wrote %s (%d series).", path, len(self.series))
        return path


def path_overlay_svg(path, width_px, height_px, paths, background=None):
    """Polyline overlay of planned paths on an optional raster background.

    `paths` maps a label to a list of (x, y) pixel points. `background` is a
    relative href to an image shown underneath.
    """
    path = Path(path)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
             f'width="{width_px}" height="{height_px}" viewBox="0 0 {width_px} {height_px}">']
    if background:
        parts.append(f'<image x="0" y="0" width="{width_px}" height="{height_px}" '
                     f'xlink:href="{escape(str(background))}"/>')
    for i, (label, pts) in enumerate(paths.items()):
        color = PALETTE[(i + 1) % len(PALETTE)]
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2">'
                     f'<title>{escape(label)}</title></polyline>')
        parts.append(f'<text x="8" y="{18 + 16 * i}" font-size="12" font-family="sans-serif" '
                     f'fill="{color}">{escape(label)}</text>')
    parts.append("</svg>")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(parts) + "\n")
    return path
