import logging

from stages.base import BaseStage
from utils.errors import ConfigurationError
from utils.imageio import write_ppm
from utils.tables import write_csv
from utils.terrain import check_world_size, generate_world, load_world_specs, render_texture, save_grid

logger = logging.getLogger(__name__)

WORLD_COLUMNS = ("world", "class", "cells", "mu_mean", "rough_mean")


class GenWorldStage(BaseStage):
    name = "gen-world"
    description = "Generate every world the experiment refers to from the world spec file."

    def world_names(self):
        exp = self.config.experiment
        names = list(exp["train_worlds"]) + [exp["eval_world"], exp["vision_world"], exp["plan_world"]]
        return sorted(set(names))

    def record(self, key=""):
        params = {
            "world_spec_sha256": self.config.world_spec_digest(),
            "worlds": self.world_names(),
            "preview_px_per_m": self.config.section("camera")["overhead_px_per_m"],
        }
        return self.make_record(key, params)

    def run(self):
        for key in self.pending():
            directory = self.directory(key)
            specs = load_world_specs(self.config.world_spec)
            missing = [n for n in self.world_names() if n not in specs]
            if missing:
                raise ConfigurationError(f"World(s) {', '.join(missing)} not defined in {self.config.world_spec}. "
                                         f"Available: {', '.join(sorted(specs))}")
            ppm = self.config.section("camera")["overhead_px_per_m"]
            rows = []
            for name in self.world_names():
                grid = generate_world(specs[name])
                check_world_size(grid)
                save_grid(grid, directory / "worlds" / f"{name}.tsnn")
                write_ppm(directory / "previews" / f"{name}.ppm", render_texture(grid, ppm, grid.seed))
                for entry in grid.summary():
                    rows.append([name, entry["class"], entry["cells"], entry["mu_mean"], entry["rough_mean"]])
                logger.info("[WORLD] %s: %d x %d cells, %d classes.", name, grid.width, grid.height,
                            len(grid.classes))
            write_csv(directory / "world_classes.csv", WORLD_COLUMNS, rows)
            self.finish(key, directory)
