import logging

from stages.base import BaseStage, policy_key
from utils.costmap import CostConfig, measure_cost_curve
from utils.noise import derive_seed
from utils.policy import PolicyVariant
from utils.simcore import OperatingMode

logger = logging.getLogger(__name__)

MODES = ("free", "dragging")
COST_STREAM = 13


class MeasureCostStage(BaseStage):
    name = "measure-cost"
    description = "Measure seconds-per-metre cost curves over friction for each operating mode."

    def keys(self):
        return list(MODES)

    def policy_key(self):
        variant = PolicyVariant.parse(self.config.experiment["cost_variant"]).value
        return policy_key(variant, self.config.seeds[0])

    def record(self, key=""):
        upstream = {"train-policy": self.app.stage("train-policy").digest(self.policy_key())}
        params = {"mode": key, "costmap": self.config.section("costmap"),
                  "payload_mass_kg": self.config.section("sim")["payload_mass_kg"]}
        return self.make_record(key, params, upstream, [self.config.seeds[0]])

    def run(self):
        cfg = CostConfig.from_dict(self.config.section("costmap"))
        for key in self.pending():
            self.require("train-policy", self.policy_key())
            variant, seed = PolicyVariant.parse(self.config.experiment["cost_variant"]).value, self.config.seeds[0]
            mode = OperatingMode.parse(key, self.config.section("sim")["payload_mass_kg"])
            curve = measure_cost_curve(self.app.policy(variant, seed), mode, cfg, derive_seed(seed, COST_STREAM),
                                       jobs=self.config.jobs)
            directory = self.directory(key)
            curve.save(directory / "cost_curve.csv")
            self.finish(key, directory)
