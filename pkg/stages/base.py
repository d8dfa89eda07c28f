import logging

from utils.config import StageRecord, is_complete, read_manifest, write_manifest

logger = logging.getLogger(__name__)


class BaseStage:
    """One pipeline stage. Subclasses name themselves, describe their outputs
    through `record()` and produce them in `run()`."""

    name = None
    description = ""

    def __init__(self, app):
        self.app = app
        self.config = app.config

    def keys(self):
        """Independent outputs of this stage (one directory each)."""
        return [""]

    def record(self, key=""):
        raise NotImplementedError("Subclasses must implement record")

    def run(self):
        raise NotImplementedError("Subclasses must implement run")

    def directory(self, key=""):
        return self.record(key).directory(self.config.output_dir)

    def digest(self, key=""):
        return self.record(key).digest

    def pending(self):
        """Keys whose output directory is not complete yet (all keys when forced)."""
        if self.app.force:
            return list(self.keys())
        todo = []
        for key in self.keys():
            if is_complete(self.directory(key)):
                logger.info("[CLI] %s%s is up to date at %s.", self.name, f" [{key}]" if key else "",
                            self.directory(key))
            else:
                todo.append(key)
        return todo

    def require(self, stage, key=""):
        """Directory of a complete upstream output; MissingArtifactError names its producer."""
        directory = self.app.stage(stage).directory(key)
        read_manifest(directory, stage)
        return directory

    def finish(self, key, directory, extra=None):
        path = write_manifest(directory, self.record(key), extra)
        logger.info("[CLI] %s%s done -> %s", self.name, f" [{key}]" if key else "", directory)
        return path

    def make_record(self, key, params, upstream=None, seeds=None):
        return StageRecord(self.name, key, params, dict(upstream or {}), list(seeds or []))


def policy_key(variant, seed):
    return f"{variant}-s{seed}"


def split_policy_key(key):
    variant, _, seed = key.rpartition("-s")
    return variant, int(seed)
