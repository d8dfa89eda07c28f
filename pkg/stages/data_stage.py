import logging

from stages.base import BaseStage, policy_key, split_policy_key
from utils.camera import PinholeCamera
from utils.dataset import DataConfig, build_dataset, label_error, save_dataset
from utils.noise import derive_seed
from utils.policy import PolicyVariant

logger = logging.getLogger(__name__)

DATA_STREAM = 5


class CollectDataStage(BaseStage):
    name = "collect-data"
    description = "Roll out trained policies on the vision world and write self-labelled camera frames."

    def keys(self):
        variants = [PolicyVariant.parse(v).value for v in self.config.experiment["data_variants"]]
        return [policy_key(v, s) for v in variants for s in self.config.seeds]

    def record(self, key=""):
        upstream = {"gen-world": self.app.stage("gen-world").digest(),
                    "train-policy": self.app.stage("train-policy").digest(key)}
        params = {"data": self.config.section("data"), "camera": self.config.section("camera"),
                  "vision_world": self.config.experiment["vision_world"]}
        return self.make_record(key, params, upstream, [split_policy_key(key)[1]])

    def run(self):
        for key in self.pending():
            variant, seed = split_policy_key(key)
            self.require("train-policy", key)
            cam_cfg = self.config.section("camera")
            camera = PinholeCamera.from_dict(cam_cfg)
            grid = self.app.world(self.config.experiment["vision_world"])
            directory = self.directory(key)
            images, summaries = build_dataset(
                self.app.policy(variant, seed), [grid], DataConfig.from_dict(self.config.section("data")), camera,
                derive_seed(seed, DATA_STREAM), cam_cfg["texture_px_per_m"], self.config.jobs,
                sky_color=cam_cfg["sky_color"], void_color=cam_cfg["void_color"],
                log_dir=directory / "dataset" / "trajectories")
            logger.info("[DATA] %s: mean label error %.4f", key, label_error(images))
            save_dataset(directory / "dataset", images, summaries, camera, {"variant": variant, "seed": seed})
            self.finish(key, directory)
