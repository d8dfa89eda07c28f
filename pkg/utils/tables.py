import csv
import math
from pathlib import Path

FLOAT_FORMAT = "%.10g"


def format_cell(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
        return FLOAT_FORMAT % value
    if hasattr(value, "item"):
        return format_cell(value.item())
    return str(value)


def write_csv(path, header, rows, meta=None):
    """Writes rows with fixed float formatting; `meta` becomes '# key=value' lines on top."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key in sorted(meta or {}):
            f.write(f"# {key}={meta[key]}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    return path


def read_csv(path):
    """Returns (meta, header, rows) with rows as lists of strings."""
    meta = {}
    data_lines = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line in f:
            if line.startswith("# ") and not data_lines:
                key, _, value = line[2:].rstrip("\n").partition("=")
                meta[key] = value
            else:
                data_lines.append(line)
    reader = csv.reader(data_lines)
    header = next(reader, [])
    return meta, header, [row for row in reader if row]


def write_grid(path, grid):
    """Writes a 2D array as a headerless CSV grid."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        for row in grid:
            writer.writerow([format_cell(float(v)) for v in row])
    return path


def read_grid(path):
    with open(path, "r", encoding="utf-8", newline="") as f:
        return [[float(v) for v in row] for row in csv.reader(f) if row]
