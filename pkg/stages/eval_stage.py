import logging

import numpy as np

from stages.base import BaseStage, policy_key
from utils.policy import EVAL_COLUMNS, PolicyVariant, RewardConfig, estimate_histogram, evaluate_estimator
from utils.tables import write_csv
from utils.workers import parallel_map

logger = logging.getLogger(__name__)

HISTOGRAM_COLUMNS = ("variant", "mu_true", "bin_lo", "bin_hi", "count")


class EvalEstimatorStage(BaseStage):
    name = "eval-estimator"
    description = "Held-out estimator error of every trained variant on the evaluation world."

    def variants(self):
        return [PolicyVariant.parse(v).value for v in self.config.variants]

    def record(self, key=""):
        train = self.app.stage("train-policy")
        upstream = {"gen-world": self.app.stage("gen-world").digest()}
        for v in self.variants():
            for s in self.config.seeds:
                k = policy_key(v, s)
                upstream[f"train-policy/{k}"] = train.digest(k)
        params = {"eval": self.config.section("eval"), "eval_world": self.config.experiment["eval_world"],
                  "reward": self.config.section("reward")}
        return self.make_record(key, params, upstream, self.config.seeds)

    def run(self):
        for key in self.pending():
            for v in self.variants():
                for s in self.config.seeds:
                    self.require("train-policy", policy_key(v, s))
            cfg = self.config.section("eval")
            eval_world = self.config.experiment["eval_world"]
            if eval_world in self.config.experiment["train_worlds"]:
                logger.warning("[EVAL] Evaluation world '%s' is also a training world; errors are held out by "
                               "episode only.", eval_world)
            grid = self.app.world(eval_world)
            reward = RewardConfig.from_dict(self.config.section("reward"))
            jobs = [(v, s) for v in self.variants() for s in self.config.seeds]

            def evaluate(job):
                variant, seed = job
                return evaluate_estimator(self.app.policy(variant, seed), [grid], cfg["num_envs"], cfg["steps"],
                                          seed + cfg["seed_offset"], reward)

            results = parallel_map(evaluate, jobs, self.config.jobs)
            rows, hist_rows = [], []
            for v in self.variants():
                mine = [r for (jv, _), r in zip(jobs, results) if jv == v]
                seeds = [s for (jv, s) in jobs if jv == v]
                for s, r in zip(seeds, mine):
                    rows.append([v, s, *r.row()])
                rows.append([v, "mean", *np.mean([r.row() for r in mine], axis=0).tolist()])
                counts = {}
                for r in mine:
                    for mu, lo, hi, n in estimate_histogram(r.mu_true, r.mu_hat, cfg["histogram_bins"]):
                        counts[(mu, lo, hi)] = counts.get((mu, lo, hi), 0) + n
                hist_rows.extend([v, mu, lo, hi, n] for (mu, lo, hi), n in sorted(counts.items()))
            directory = self.directory(key)
            write_csv(directory / "estimator_mse.csv", ("variant", "seed", *EVAL_COLUMNS), rows)
            write_csv(directory / "estimate_histogram.csv", HISTOGRAM_COLUMNS, hist_rows)
            self.finish(key, directory)
