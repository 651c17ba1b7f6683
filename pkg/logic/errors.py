"""
Exception hierarchy for the fibril design pipeline.

The front end maps ConfigError (and pydantic ValidationError) to exit code 2
and every other FibrilDesignError to exit code 1.
"""

from typing import Optional


class FibrilDesignError(Exception):
    """Base class for every domain error raised by the pipeline."""


class ConfigError(FibrilDesignError):
    pass


class GeometryError(FibrilDesignError):
    pass


class AssemblyError(FibrilDesignError):
    pass


class SimulationError(FibrilDesignError):
    pass


class NonDetachingError(SimulationError):
    pass


class DatasetError(FibrilDesignError):
    pass


class ArtifactParseError(FibrilDesignError):
    """Malformed artifact file, with the location of the first bad field."""

    def __init__(self, path: str, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.path = path
        self.line = line
        self.field = field
        where = path
        if line is not None:
            where += f":{line}"
        if field is not None:
            where += f" [{field}]"
        super().__init__(f"{where}: {message}")


class UnsupportedVersionError(FibrilDesignError):
    pass


class ModelShapeError(FibrilDesignError):
    pass


class SurrogateError(FibrilDesignError):
    pass


class TrainingDivergedError(SurrogateError):
    def __init__(self, epoch: int, learning_rate: float):
        self.epoch = epoch
        self.learning_rate = learning_rate
        super().__init__(
            f"training diverged (loss is not finite) at epoch {epoch} "
            f"with learning rate {learning_rate:g}; lower the learning rate"
        )


class DesignError(FibrilDesignError):
    pass


class MissingArtifactError(FibrilDesignError):
    def __init__(self, path: str, stage: str):
        self.path = path
        self.stage = stage
        super().__init__(f"missing {path}: run stage '{stage}' first")
