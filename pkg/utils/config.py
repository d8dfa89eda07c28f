"""Experiment configuration, content addresses and stage manifests.

Stage outputs live in `<output_dir>/<stage>/<digest12>/`, where the digest is
the SHA-256 of the stage's parameters plus the digests of the stages it
reads from. A directory is complete once its `manifest.json` exists.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from utils.errors import ConfigurationError, MissingArtifactError
from utils.settings import load_settings

logger = logging.getLogger(__name__)

CODE_VERSION = "0.3.0"
DIGEST_CHARS = 12
MANIFEST_NAME = "manifest.json"
_CHUNK = 1 << 20


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return obj.as_posix()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def content_digest(params, upstream=None):
    hasher = hashlib.sha256()
    payload = {"code_version": CODE_VERSION, "params": params, "upstream": dict(upstream or {})}
    hasher.update(canonical_json(payload).encode("utf-8"))
    return hasher.hexdigest()


def file_digest(path):
    hasher = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(_CHUNK), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def parse_override(text):
    """'section.key=value' -> (section, key, value)."""
    target, sep, value = text.partition("=")
    section, dot, key = target.strip().partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigurationError(f"Override '{text}' must look like section.key=value.")
    return section, key, value.strip()


@dataclass
class ExperimentConfig:
    settings: dict
    world_spec: Path
    output_dir: Path
    source: Path = None

    @classmethod
    def load(cls, path=None, overrides=None, output_dir=None, jobs=None, seeds=None, variants=None):
        """Reads an experiment INI (or defaults only) and applies CLI overrides.

        The world spec path is resolved relative to the experiment file.
        """
        nested = {}
        for text in overrides or ():
            section, key, value = parse_override(text)
            nested.setdefault(section, {})[key] = value
        experiment = nested.setdefault("experiment", {})
        if output_dir is not None:
            experiment["output_dir"] = str(output_dir)
        if jobs is not None:
            experiment["jobs"] = str(jobs)
        if seeds is not None:
            experiment["seeds"] = ", ".join(str(s) for s in seeds)
        if variants is not None:
            experiment["variants"] = ", ".join(variants)

        path = Path(path) if path is not None else None
        if path is not None and not path.exists():
            raise FileNotFoundError(f"Experiment config not found: {path}")
        settings = load_settings(path, nested)
        base = path.parent if path is not None else Path.cwd()
        spec = Path(settings["experiment"]["world_spec"])
        if not spec.is_absolute():
            spec = base / spec
        out = Path(settings["experiment"]["output_dir"])
        config = cls(settings, spec, out, path)
        config.validate()
        return config

    def validate(self):
        exp = self.experiment
        if not exp["seeds"]:
            raise ConfigurationError("[experiment] seeds must list at least one seed.")
        if len(set(exp["seeds"])) != len(exp["seeds"]):
            raise ConfigurationError("[experiment] seeds must be distinct.")
        if exp["jobs"] < 1:
            raise ConfigurationError("[experiment] jobs must be at least 1.")
        for name in ("variants", "data_variants"):
            if not exp[name]:
                raise ConfigurationError(f"[experiment] {name} must not be empty.")

    @property
    def experiment(self):
        return self.settings["experiment"]

    @property
    def seeds(self):
        return [int(s) for s in self.experiment["seeds"]]

    @property
    def variants(self):
        return list(self.experiment["variants"])

    @property
    def jobs(self):
        return int(self.experiment["jobs"])

    def section(self, name):
        return dict(self.settings[name])

    def world_spec_digest(self):
        if not self.world_spec.exists():
            raise ConfigurationError(f"World spec file not found: {self.world_spec}")
        return file_digest(self.world_spec)

    def stage_root(self, stage):
        return self.output_dir / stage


@dataclass
class StageRecord:
    """Identity of one stage output: what was computed, from what."""

    stage: str
    key: str
    params: dict
    upstream: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)

    @property
    def digest(self):
        return content_digest({"stage": self.stage, "key": self.key, **self.params}, self.upstream)

    def directory(self, output_dir):
        return Path(output_dir) / self.stage / self.digest[:DIGEST_CHARS]


def output_digests(directory):
    """SHA-256 of every file under `directory` except the manifest, keyed by posix relative path."""
    directory = Path(directory)
    own = directory / MANIFEST_NAME
    return {path.relative_to(directory).as_posix(): file_digest(path)
            for path in sorted(directory.rglob("*")) if path.is_file() and path != own}


def write_manifest(directory, record, extra=None):
    directory = Path(directory)
    manifest = {
        "stage": record.stage,
        "key": record.key,
        "config_hash": record.digest,
        "code_version": CODE_VERSION,
        "seeds": list(record.seeds),
        "params": record.params,
        "inputs": dict(record.upstream),
        "outputs": output_digests(directory),
        **(extra or {}),
    }
    path = directory / MANIFEST_NAME
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable))
        f.write("\n")
    logger.debug("[CLI] Manifest written to %s", path)
    return path


def read_manifest(directory, producer):
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise MissingArtifactError(f"{producer} output", producer, path)
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def is_complete(directory):
    return (Path(directory) / MANIFEST_NAME).exists()
