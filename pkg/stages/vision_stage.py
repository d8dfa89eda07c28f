import logging

from stages.base import BaseStage, split_policy_key
from utils.dataset import load_dataset
from utils.noise import derive_seed
from utils.tables import write_csv
from utils.vision import VisionTrainConfig, train_vision

logger = logging.getLogger(__name__)

VISION_STREAM = 7
CURVE_COLUMNS = ("head", "epoch", "train_loss", "val_loss", "val_accuracy")


class TrainVisionStage(BaseStage):
    name = "train-vision"
    description = "Fit the per-patch friction and roughness heads on each collected dataset."

    def keys(self):
        return self.app.stage("collect-data").keys()

    def record(self, key=""):
        upstream = {"collect-data": self.app.stage("collect-data").digest(key)}
        return self.make_record(key, {"vision": self.config.section("vision")}, upstream,
                                [split_policy_key(key)[1]])

    def run(self):
        cfg = VisionTrainConfig.from_dict(self.config.section("vision"))
        for key in self.pending():
            _, seed = split_policy_key(key)
            images, _ = load_dataset(self.require("collect-data", key) / "dataset")
            model, curves, val_frames = train_vision(images, cfg, derive_seed(seed, VISION_STREAM))
            directory = self.directory(key)
            model.save(directory / "vision.tsnn")
            rows = [[head, *row] for head in ("mu", "rough") for row in curves[head]]
            write_csv(directory / "vision_curve.csv", CURVE_COLUMNS, rows, {"dataset": key})
            write_csv(directory / "holdout.csv", ("frame", "holdout"),
                      [[i, bool(h)] for i, h in enumerate(val_frames)])
            self.finish(key, directory)
