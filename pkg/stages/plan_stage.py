import logging
import math

import numpy as np

from stages.base import BaseStage
from stages.cost_stage import MODES
from utils.camera import OrthoCamera, ground_truth_map
from utils.config import read_manifest
from utils.costmap import CostCurve, block_mean, build_cost_map
from utils.figures import path_overlay_svg
from utils.imageio import read_ppm, write_ppm
from utils.planner import (astar, dijkstra_costs, overlay_path, path_cost_under, path_length_m, path_mean_mu,
                           path_mu_integral, path_pixels, save_path_csv)
from utils.tables import read_grid, write_csv

logger = logging.getLogger(__name__)

PLAN_COLUMNS = ("mode", "found", "cost_own", "cost_under_free", "cost_under_dragging", "dijkstra_cost",
                "matches_dijkstra", "mu_integral_pred", "mu_integral_true", "mean_mu_true", "length_m", "n_cells")
PATH_COLORS = {"free": (40, 120, 255), "dragging": (255, 40, 40)}


class PlanStage(BaseStage):
    name = "plan"
    description = "Build per-mode cost maps from the predicted friction and plan A* paths."

    def record(self, key=""):
        upstream = {"predict": self.app.stage("predict").digest(),
                    "gen-world": self.app.stage("gen-world").digest()}
        for mode in MODES:
            upstream[f"measure-cost/{mode}"] = self.app.stage("measure-cost").digest(mode)
        params = {"planner": self.config.section("planner"),
                  "downsample": self.config.section("costmap")["downsample"],
                  "plan_world": self.config.experiment["plan_world"]}
        return self.make_record(key, params, upstream)

    def run(self):
        for key in self.pending():
            predicted = self.require("predict")
            mpp = float(read_manifest(predicted, "predict")["plan_meters_per_pixel"])
            mu_map = np.array(read_grid(predicted / "plan" / "mu.csv"), dtype=np.float64)
            factor = int(self.config.section("costmap")["downsample"])
            planner = self.config.section("planner")
            start, goal = tuple(planner["start"]), tuple(planner["goal"])

            grid = self.app.world(self.config.experiment["plan_world"])
            true_mu, _ = ground_truth_map(grid, OrthoCamera(1.0 / mpp, mu_map.shape[1], mu_map.shape[0]))
            true_cells = block_mean(true_mu, factor)

            directory = self.directory(key)
            costmaps, paths, mu_cells = {}, {}, None
            for mode in MODES:
                curve = CostCurve.load(self.require("measure-cost", mode) / "cost_curve.csv")
                costmaps[mode], mu_cells = build_cost_map(mu_map, mpp, curve, factor,
                                                          {"world": grid.name, "curve_policy": curve.meta.get("policy")})
                costmaps[mode].save(directory / f"costmap_{mode}.csv")
                paths[mode] = astar(costmaps[mode], start, goal)
                if not paths[mode].found:
                    logger.warning("[PLAN] %s: no path from %s to %s (%s).", mode, start, goal, paths[mode].reason)

            rows = []
            for mode in MODES:
                path, cm = paths[mode], costmaps[mode]
                if not path.found:
                    rows.append([mode, False] + [math.nan] * (len(PLAN_COLUMNS) - 2))
                    continue
                save_path_csv(path, directory / f"path_{mode}.csv")
                oracle = float(dijkstra_costs(cm, start)[goal])
                rows.append([
                    mode, True, path.total, path_cost_under(path, costmaps["free"]),
                    path_cost_under(path, costmaps["dragging"]), oracle,
                    abs(oracle - path.total) <= 1e-9 * max(1.0, oracle),
                    path_mu_integral(path, mu_cells, cm.cell_m), path_mu_integral(path, true_cells, cm.cell_m),
                    path_mean_mu(path, true_cells), path_length_m(path, cm.cell_m), len(path.cells),
                ])
                logger.info("[PLAN] %s: cost %.3f s, length %.2f m, mean true mu %.3f", mode, path.total,
                            rows[-1][10], rows[-1][9])
            write_csv(directory / "plan_summary.csv", PLAN_COLUMNS, rows, {"start": start, "goal": goal})

            overlay = read_ppm(predicted / "plan" / "view.ppm")
            svg_paths = {}
            for mode in MODES:
                if paths[mode].found:
                    overlay = overlay_path(overlay, paths[mode], factor, PATH_COLORS[mode])
                    svg_paths[mode] = path_pixels(paths[mode], factor)
            write_ppm(directory / "paths_overlay.ppm", overlay)
            path_overlay_svg(directory / "paths.svg", mu_map.shape[1], mu_map.shape[0], svg_paths)
            self.finish(key, directory)
