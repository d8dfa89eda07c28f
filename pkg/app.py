import logging
import threading

from stages.base import policy_key
from stages.cost_stage import MeasureCostStage
from stages.data_stage import CollectDataStage
from stages.eval_stage import EvalEstimatorStage
from stages.figures_stage import EmitFiguresStage
from stages.plan_stage import PlanStage
from stages.predict_stage import PredictStage
from stages.train_stage import TrainPolicyStage
from stages.vision_stage import TrainVisionStage
from stages.world_stage import GenWorldStage
from utils.policy import PolicyCheckpoint
from utils.terrain import load_grid

logger = logging.getLogger(__name__)

# run-all order
STAGES = (
    GenWorldStage,
    TrainPolicyStage,
    EvalEstimatorStage,
    CollectDataStage,
    TrainVisionStage,
    PredictStage,
    MeasureCostStage,
    PlanStage,
    EmitFiguresStage,
)
STAGE_NAMES = tuple(cls.name for cls in STAGES)


class TerrainPipelineApp:
    """Holds the experiment config, the stage registry and loaded artifacts."""

    def __init__(self, config, force=False):
        self.config = config
        self.force = force
        self._stages = {cls.name: cls(self) for cls in STAGES}
        self._cache = {}
        self._lock = threading.Lock()
        self._ensure_dirs()

    def _ensure_dirs(self):
        try:
            self.config.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error("[CLI] Could not create output directory %s: %s", self.config.output_dir, e)
            raise

    def stage(self, name):
        try:
            return self._stages[name]
        except KeyError:
            raise KeyError(f"Unknown stage '{name}'. Choose from: {', '.join(STAGE_NAMES)}") from None

    def run(self, name):
        stage = self.stage(name)
        logger.info("[CLI] Running %s", name)
        return stage.run()

    def run_all(self):
        for name in STAGE_NAMES:
            self.run(name)

    def _cached(self, key, loader):
        with self._lock:
            if key not in self._cache:
                self._cache[key] = loader()
            return self._cache[key]

    def world(self, name):
        directory = self.stage("gen-world").require("gen-world")
        return self._cached(("world", name), lambda: load_grid(directory / "worlds" / f"{name}.tsnn"))

    def policy(self, variant, seed):
        key = policy_key(variant, seed)
        directory = self.stage("train-policy").require("train-policy", key)
        return self._cached(("policy", key), lambda: PolicyCheckpoint.load(directory / "policy.tsnn"))
