"""A* search over cost maps.

Moves are 8-connected. Stepping between cells a and b costs the mean of their
cell costs, times sqrt(2) on diagonals. The heuristic is the straight-line
cell distance times the cheapest finite cell cost, shrunk by 1e-12 so that
floating-point rounding never makes it overestimate.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from utils.errors import ConfigurationError
from utils.imageio import draw_polyline
from utils.tables import write_csv

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
HEURISTIC_SHRINK = 1.0 - 1e-12


@dataclass
class Path:
    cells: list
    total: float
    segments: list = field(default_factory=list)

    @property
    def found(self):
        return True

    def cumulative(self):
        return np.concatenate([[0.0], np.cumsum(self.segments)]).tolist()


@dataclass
class NoPath:
    start: tuple
    goal: tuple
    reason: str = "no finite-cost path"

    @property
    def found(self):
        return False


def edge_cost(cost, a, b):
    step = SQRT2 if (a[0] != b[0] and a[1] != b[1]) else 1.0
    return (cost[a] + cost[b]) / 2.0 * step


def _as_array(costmap):
    return np.asarray(getattr(costmap, "cost", costmap), dtype=np.float64)


def _check_endpoint(cost, cell, name):
    r, c = cell
    if not (0 <= r < cost.shape[0] and 0 <= c < cost.shape[1]):
        raise ConfigurationError(f"{name} cell {cell} is outside the {cost.shape[0]}x{cost.shape[1]} map.")
    if not np.isfinite(cost[r, c]):
        raise ConfigurationError(f"{name} cell {cell} is untraversable.")


def astar(costmap, start, goal):
    """Cost-minimal 8-connected path from start to goal (row, col); NoPath if none exists.

    Open-list ties are broken by lower heuristic, then row-major cell index.
    """
    cost = _as_array(costmap)
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    _check_endpoint(cost, start, "Start")
    _check_endpoint(cost, goal, "Goal")
    rows, cols = cost.shape
    finite = cost[np.isfinite(cost)]
    h_scale = float(finite.min()) * HEURISTIC_SHRINK

    def h(cell):
        return math.hypot(cell[0] - goal[0], cell[1] - goal[1]) * h_scale

    g = {start: 0.0}
    parent = {start: None}
    h0 = h(start)
    open_heap = [(h0, h0, start[0] * cols + start[1], start)]
    while open_heap:
        f, hc, _, cell = heapq.heappop(open_heap)
        if f > g[cell] + hc:
            continue  # stale entry
        if cell == goal:
            break
        for dr, dc in NEIGHBOURS:
            nb = (cell[0] + dr, cell[1] + dc)
            if not (0 <= nb[0] < rows and 0 <= nb[1] < cols) or not np.isfinite(cost[nb]):
                continue
            cand = g[cell] + edge_cost(cost, cell, nb)
            if cand < g.get(nb, math.inf):
                g[nb] = cand
                parent[nb] = cell
                # a closed cell reached more cheaply is reopened
                hn = h(nb)
                heapq.heappush(open_heap, (cand + hn, hn, nb[0] * cols + nb[1], nb))
    else:
        return NoPath(start, goal)
    cells = []
    node = goal
    while node is not None:
        cells.append(node)
        node = parent[node]
    cells.reverse()
    segments = [edge_cost(cost, a, b) for a, b in zip(cells[:-1], cells[1:])]
    return Path(cells, g[goal], segments)


def dijkstra_costs(costmap, start):
    """Cost-to-come from start to every cell under the same edge model; inf where unreachable."""
    cost = _as_array(costmap)
    start = (int(start[0]), int(start[1]))
    _check_endpoint(cost, start, "Start")
    rows, cols = cost.shape
    dist = np.full(cost.shape, np.inf)
    dist[start] = 0.0
    heap = [(0.0, start)]
    while heap:
        d, cell = heapq.heappop(heap)
        if d > dist[cell]:
            continue
        for dr, dc in NEIGHBOURS:
            nb = (cell[0] + dr, cell[1] + dc)
            if not (0 <= nb[0] < rows and 0 <= nb[1] < cols) or not np.isfinite(cost[nb]):
                continue
            cand = d + edge_cost(cost, cell, nb)
            if cand < dist[nb]:
                dist[nb] = cand
                heapq.heappush(heap, (cand, nb))
    return dist


def path_cost_under(path, costmap):
    """Re-evaluates a path's cells under another cost map."""
    cost = _as_array(costmap)
    return float(sum(edge_cost(cost, a, b) for a, b in zip(path.cells[:-1], path.cells[1:])))


def path_mu_integral(path, mu_cells, cell_m):
    """Line integral of mu along the path (edge-averaged), in mu x metres."""
    mu_cells = np.asarray(mu_cells, dtype=np.float64)
    total = 0.0
    for a, b in zip(path.cells[:-1], path.cells[1:]):
        step = SQRT2 if (a[0] != b[0] and a[1] != b[1]) else 1.0
        total += (mu_cells[a] + mu_cells[b]) / 2.0 * step * cell_m
    return float(total)


def path_length_m(path, cell_m):
    return float(sum((SQRT2 if (a[0] != b[0] and a[1] != b[1]) else 1.0) * cell_m
                     for a, b in zip(path.cells[:-1], path.cells[1:])))


def path_mean_mu(path, mu_cells):
    mu_cells = np.asarray(mu_cells, dtype=np.float64)
    return float(np.mean([mu_cells[c] for c in path.cells]))


def save_path_csv(path_obj, file_path):
    cumulative = path_obj.cumulative()
    return write_csv(file_path, ("row", "col", "cumulative_cost"),
                     [(r, c, cum) for (r, c), cum in zip(path_obj.cells, cumulative)])


def path_pixels(path, cell_px):
    """Cell centres in pixel coordinates (x = col, y = row) of an image with cell_px pixels per cell."""
    return [((c + 0.5) * cell_px - 0.5, (r + 0.5) * cell_px - 0.5) for r, c in path.cells]


def overlay_path(rgb, path, cell_px, color=(255, 40, 40), thickness=2):
    return draw_polyline(rgb, path_pixels(path, cell_px), color, thickness)
