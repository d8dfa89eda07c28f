import logging

import numpy as np

from stages.base import BaseStage, policy_key, split_policy_key
from utils.camera import OrthoCamera, PinholeCamera, class_map, ground_truth_map, render_ortho
from utils.dataset import label_error, load_dataset
from utils.errors import ConfigurationError
from utils.imageio import colorize, write_ppm
from utils.policy import PolicyVariant
from utils.tables import read_csv, write_csv, write_grid
from utils.terrain import MU_LIMITS, render_texture
from utils.vision import CLASS_SUMMARY_COLUMNS, VisionModel, class_summary, dense_rmse, predict_dense

logger = logging.getLogger(__name__)

RMSE_COLUMNS = ("variant", "seed", "rmse_mu", "rmse_rough", "overhead_rmse_mu", "holdout_frames", "label_error_mu")


def _cat(parts):
    return np.concatenate(parts) if parts else np.zeros(0)


def _holdout(directory):
    _, _, rows = read_csv(directory / "holdout.csv")
    return np.array([r[1] == "1" for r in rows], dtype=bool)


def _overhead(grid, cam_cfg):
    camera = OrthoCamera.covering(grid, cam_cfg["overhead_px_per_m"])
    texture = render_texture(grid, cam_cfg["texture_px_per_m"], grid.seed)
    return camera, render_ortho(texture, cam_cfg["texture_px_per_m"], camera, cam_cfg["void_color"])


class PredictStage(BaseStage):
    name = "predict"
    description = "Dense predictions on held-out frames, overhead views and the planning world."

    def dataset_keys(self):
        return self.app.stage("collect-data").keys()

    def plan_key(self):
        exp = self.config.experiment
        return policy_key(PolicyVariant.parse(exp["plan_variant"]).value, self.config.seeds[0])

    def record(self, key=""):
        upstream = {"gen-world": self.app.stage("gen-world").digest()}
        for k in self.dataset_keys():
            upstream[f"collect-data/{k}"] = self.app.stage("collect-data").digest(k)
            upstream[f"train-vision/{k}"] = self.app.stage("train-vision").digest(k)
        exp = self.config.experiment
        params = {"camera": self.config.section("camera"), "vision_world": exp["vision_world"],
                  "plan_world": exp["plan_world"], "plan_variant": exp["plan_variant"]}
        return self.make_record(key, params, upstream, self.config.seeds)

    def run(self):
        if self.plan_key() not in self.dataset_keys():
            raise ConfigurationError(f"[experiment] plan_variant '{self.config.experiment['plan_variant']}' "
                                     f"must be one of data_variants.")
        for key in self.pending():
            directory = self.directory(key)
            cam_cfg = self.config.section("camera")
            grid = self.app.world(self.config.experiment["vision_world"])
            ortho, overhead_rgb = _overhead(grid, cam_cfg)
            overhead_mu, _ = ground_truth_map(grid, ortho)
            overhead_cls = class_map(grid, ortho)
            write_ppm(directory / "predictions" / "overhead_view.ppm", overhead_rgb)
            write_ppm(directory / "predictions" / "overhead_truth_mu.ppm", colorize(overhead_mu, *MU_LIMITS))

            rows, summary_entries = [], {}
            for k in self.dataset_keys():
                variant, seed = split_policy_key(k)
                model = VisionModel.load(self.require("train-vision", k) / "vision.tsnn")
                images, manifest = load_dataset(self.require("collect-data", k) / "dataset")
                camera = PinholeCamera.from_dict(manifest["camera"])
                holdout = _holdout(self.app.stage("train-vision").directory(k))
                preds, truths, rough_preds, rough_truths = [], [], [], []
                first = True
                for i in np.flatnonzero(holdout):
                    im = images[i]
                    mu_map, rough_map, _ = predict_dense(im.rgb, model)
                    mu_true, rough_true = ground_truth_map(grid, camera, im.meta["pose"])
                    preds.append(mu_map.ravel())
                    truths.append(mu_true.ravel())
                    rough_preds.append(rough_map.ravel())
                    rough_truths.append(rough_true.ravel())
                    if first:
                        write_ppm(directory / "predictions" / f"{k}_frame.ppm", im.rgb)
                        write_ppm(directory / "predictions" / f"{k}_frame_mu.ppm", colorize(mu_map, *MU_LIMITS))
                        write_ppm(directory / "predictions" / f"{k}_frame_truth_mu.ppm",
                                  colorize(mu_true, *MU_LIMITS))
                        first = False
                over_mu, _, _ = predict_dense(overhead_rgb, model)
                rows.append([variant, seed, dense_rmse(_cat(preds), _cat(truths)),
                             dense_rmse(_cat(rough_preds), _cat(rough_truths)), dense_rmse(over_mu, overhead_mu),
                             int(holdout.sum()), label_error(images)])
                write_ppm(directory / "predictions" / f"{k}_overhead_mu.ppm", colorize(over_mu, *MU_LIMITS))
                if seed == self.config.seeds[0]:
                    summary_entries.update(self._summary_sources(variant, images, holdout, model, camera, grid,
                                                                 over_mu, overhead_cls))
                logger.info("[VISION] %s held-out RMSE mu %.4f, overhead RMSE mu %.4f", k, rows[-1][2], rows[-1][4])

            for variant in dict.fromkeys(r[0] for r in rows):
                mine = [r for r in rows if r[0] == variant]
                rows.append([variant, "mean", *np.mean([r[2:] for r in mine], axis=0).tolist()])
            write_csv(directory / "vision_rmse.csv", RMSE_COLUMNS, rows)

            summary_entries["ground_truth"] = (np.asarray(grid.class_id).ravel(), np.asarray(grid.mu).ravel())
            names = {cid: tc.name for cid, tc in grid.classes.items()}
            write_csv(directory / "terrain_friction_summary.csv", CLASS_SUMMARY_COLUMNS,
                      class_summary(summary_entries, names), {"world": grid.name})

            extra = self._predict_plan_world(directory, cam_cfg)
            self.finish(key, directory, extra)

    def _summary_sources(self, variant, images, holdout, model, camera, grid, over_mu, overhead_cls):
        label_cls, label_mu, train_cls, train_mu = [], [], [], []
        for i, im in enumerate(images):
            if holdout[i]:
                continue
            cls = class_map(grid, camera, im.meta["pose"])
            if len(im.labels):
                col = np.clip(np.floor(im.labels[:, 0] + 0.5).astype(np.int64), 0, cls.shape[1] - 1)
                row = np.clip(np.floor(im.labels[:, 1] + 0.5).astype(np.int64), 0, cls.shape[0] - 1)
                label_cls.append(cls[row, col])
                label_mu.append(im.labels[:, 2])
            mu_map, _, _ = predict_dense(im.rgb, model)
            train_cls.append(cls.ravel())
            train_mu.append(mu_map.ravel())
        return {
            f"{variant}:labels": (_cat(label_cls), _cat(label_mu)),
            f"{variant}:vision_train": (_cat(train_cls), _cat(train_mu)),
            f"{variant}:vision_overhead": (overhead_cls.ravel(), over_mu.ravel()),
        }

    def _predict_plan_world(self, directory, cam_cfg):
        variant, _ = split_policy_key(self.plan_key())
        model = VisionModel.load(self.require("train-vision", self.plan_key()) / "vision.tsnn")
        grid = self.app.world(self.config.experiment["plan_world"])
        ortho, rgb = _overhead(grid, cam_cfg)
        mu_map, _, _ = predict_dense(rgb, model)
        write_ppm(directory / "plan" / "view.ppm", rgb)
        write_ppm(directory / "plan" / "mu.ppm", colorize(mu_map, *MU_LIMITS))
        write_grid(directory / "plan" / "mu.csv", mu_map)
        logger.info("[VISION] Planning world '%s' predicted with %s (%dx%d px).", grid.name, variant,
                    mu_map.shape[1], mu_map.shape[0])
        return {"plan_meters_per_pixel": ortho.meters_per_pixel, "plan_world": grid.name}
