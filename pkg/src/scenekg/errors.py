"""Exception hierarchy shared across the package."""


class SceneKGError(Exception):
    """Base class for all scenekg errors."""


class ConfigError(SceneKGError):
    """Invalid configuration or usage (bad thresholds, empty whitelists, ...)."""


class DataError(SceneKGError):
    """Malformed or unusable input data encountered at runtime."""


class TrainingError(SceneKGError):
    """Training diverged or could not proceed (e.g. NaN loss)."""


class NoValidCorruption(SceneKGError):
    """Every candidate replacement for a triple already exists in the graph."""
