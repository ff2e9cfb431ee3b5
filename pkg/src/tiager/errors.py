"""Exception hierarchy shared by every pipeline stage."""


class TiagerError(Exception):
    """Base class for all pipeline errors."""


class InvalidInputError(TiagerError, ValueError):
    pass


class CoverageError(TiagerError, ValueError):
    """A tile plan or patch set does not cover the canvas."""


class DegenerateInputError(TiagerError, ValueError):
    pass


class UndefinedMetricError(TiagerError, ValueError):
    """The requested metric has no defined value for these inputs."""


class BackendError(TiagerError, RuntimeError):
    pass


class ManifestError(TiagerError, ValueError):
    pass


class TileIOError(TiagerError, OSError):
    pass


class ConfigError(TiagerError, ValueError):
    pass


class StageError(TiagerError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class ParseError(TiagerError, ValueError):
    """A data file could not be parsed; the message names the line."""
