class ConfigurationError(ValueError):
    """Invalid experiment, world or stage configuration."""


class DomainError(ValueError):
    """A query fell outside the domain of the object it was asked of."""


class SimulationFault(RuntimeError):
    """The surrogate dynamics produced a non-finite state."""

    def __init__(self, message, env_ids=None):
        super().__init__(message)
        self.env_ids = [] if env_ids is None else list(env_ids)


class ContractViolation(RuntimeError):
    """Caller broke an interface contract (stale cache, misaligned inputs, ...)."""


class VisionDataError(ValueError):
    """Labelled dataset cannot support head training."""


class MissingArtifactError(FileNotFoundError):
    def __init__(self, what, producer, path=None):
        self.what = what
        self.producer = producer
        self.path = path
        where = f" (expected at {path})" if path else ""
        super().__init__(f"Missing {what}{where}. Run the '{producer}' subcommand first.")
