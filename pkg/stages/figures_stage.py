import logging
import shutil

import numpy as np

from stages.base import BaseStage, policy_key
from stages.cost_stage import MODES
from utils.config import is_complete
from utils.costmap import CostCurve
from utils.errors import MissingArtifactError
from utils.figures import LineChart
from utils.policy import PolicyVariant
from utils.tables import read_csv, write_csv

logger = logging.getLogger(__name__)

# (stage, file) pairs copied verbatim into the figure directory
COLLECTED = (
    ("eval-estimator", "estimator_mse.csv"),
    ("eval-estimator", "estimate_histogram.csv"),
    ("predict", "vision_rmse.csv"),
    ("predict", "terrain_friction_summary.csv"),
    ("plan", "plan_summary.csv"),
    ("plan", "paths.svg"),
    ("plan", "paths_overlay.ppm"),
)


class EmitFiguresStage(BaseStage):
    name = "emit-figures"
    description = "Collect summary CSVs and draw SVG charts of training and cost curves."

    def training_keys(self):
        return [policy_key(PolicyVariant.parse(v).value, s) for v in self.config.variants for s in self.config.seeds]

    def inputs(self):
        """(label, stage, key) for every upstream output the figures read."""
        found = [(f"training curve {k}", "train-policy", k) for k in self.training_keys()]
        found += [("estimator evaluation", "eval-estimator", ""), ("dense predictions", "predict", "")]
        found += [(f"{m} cost curve", "measure-cost", m) for m in MODES]
        found.append(("planned paths", "plan", ""))
        return found

    def record(self, key=""):
        upstream = {f"{stage}/{k}" if k else stage: self.app.stage(stage).digest(k) for _, stage, k in self.inputs()}
        return self.make_record(key, {"variants": self.config.variants}, upstream, self.config.seeds)

    def check_inputs(self):
        missing = [(label, stage, self.app.stage(stage).directory(k)) for label, stage, k in self.inputs()
                   if not is_complete(self.app.stage(stage).directory(k))]
        if missing:
            listing = "; ".join(f"{label} from '{stage}' at {path}" for label, stage, path in missing)
            error = MissingArtifactError(f"figure inputs ({listing})", missing[0][1])
            error.missing = missing
            raise error

    def run(self):
        self.check_inputs()
        for key in self.pending():
            directory = self.directory(key)
            for stage, name in COLLECTED:
                shutil.copyfile(self.app.stage(stage).directory() / name, directory / name)
            self._training_charts(directory)
            self._cost_curves(directory)
            self.finish(key, directory)
            logger.info("[CLI] Figures and summaries in %s", directory)

    def _training_charts(self, directory):
        reward = LineChart("Task reward during training", "iteration", "mean task reward per step")
        est = LineChart("Friction estimation error during training", "iteration", "estimator MSE (mu)")
        for variant in dict.fromkeys(PolicyVariant.parse(v).value for v in self.config.variants):
            curves = []
            for s in self.config.seeds:
                _, header, rows = read_csv(self.app.stage("train-policy").directory(policy_key(variant, s))
                                           / "training_curve.csv")
                curves.append(np.array([[float(x) for x in r] for r in rows]).reshape(-1, len(header)))
            n = min(len(c) for c in curves)
            mean = np.mean([c[:n] for c in curves], axis=0)
            cols = {name: i for i, name in enumerate(header)}
            reward.add(variant, mean[:, cols["iteration"]], mean[:, cols["task_reward"]])
            est.add(variant, mean[:, cols["iteration"]], mean[:, cols["est_mse_mu"]])
        reward.save(directory / "training_reward.svg")
        est.save(directory / "training_estimation.svg")

    def _cost_curves(self, directory):
        chart = LineChart("Traversal cost over friction", "mu", "seconds per metre")
        curves = {m: CostCurve.load(self.app.stage("measure-cost").directory(m) / "cost_curve.csv") for m in MODES}
        grid = curves[MODES[0]].mu_grid
        rows = [[mu] + [float(np.interp(mu, curves[m].mu_grid, curves[m].cost)) for m in MODES] for mu in grid]
        write_csv(directory / "cost_curves.csv", ("mu", *(f"{m}_seconds_per_meter" for m in MODES)), rows)
        for m in MODES:
            chart.add(m, curves[m].mu_grid, curves[m].cost)
        chart.save(directory / "cost_curves.svg")
