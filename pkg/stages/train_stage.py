import logging

from stages.base import BaseStage, policy_key, split_policy_key
from utils.policy import CURVE_COLUMNS, PolicyVariant, PpoConfig, RewardConfig, train
from utils.simcore import SimConfig
from utils.tables import write_csv
from utils.workers import parallel_map

logger = logging.getLogger(__name__)


class TrainPolicyStage(BaseStage):
    name = "train-policy"
    description = "Train each policy variant for each seed on the training worlds."

    def variants(self):
        exp = self.config.experiment
        wanted = list(exp["variants"]) + list(exp["data_variants"]) + [exp["cost_variant"]]
        return [v.value for v in PolicyVariant if v.value in {PolicyVariant.parse(w).value for w in wanted}]

    def keys(self):
        return [policy_key(v, s) for v in self.variants() for s in self.config.seeds]

    def record(self, key=""):
        variant, seed = split_policy_key(key)
        params = {
            "variant": variant,
            "seed": seed,
            "train_worlds": list(self.config.experiment["train_worlds"]),
            "sim": self.config.section("sim"),
            "ppo": self.config.section("ppo"),
            "reward": self.config.section("reward"),
        }
        return self.make_record(key, params, {"gen-world": self.app.stage("gen-world").digest()}, [seed])

    def run(self):
        todo = self.pending()
        if not todo:
            return
        self.require("gen-world")
        grids = [self.app.world(n) for n in self.config.experiment["train_worlds"]]
        sim = SimConfig.from_dict(self.config.section("sim"))
        ppo = PpoConfig.from_dict(self.config.section("ppo"))
        reward = RewardConfig.from_dict(self.config.section("reward"))

        def train_one(key):
            variant, seed = split_policy_key(key)
            ckpt, curves = train(variant, grids, ppo, reward, sim, seed)
            directory = self.directory(key)
            ckpt.save(directory / "policy.tsnn")
            write_csv(directory / "training_curve.csv", CURVE_COLUMNS,
                      [[row[c] for c in CURVE_COLUMNS] for row in curves],
                      {"variant": variant, "seed": seed})
            self.finish(key, directory)
            return key

        parallel_map(train_one, todo, self.config.jobs)
