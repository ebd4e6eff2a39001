class EmbedkitError(Exception):
    """Base class; ``category`` is what the CLI prints and maps to an exit code."""

    category = "error"
    exit_code = 1


class ShapeError(EmbedkitError, ValueError):
    category = "shape"
    exit_code = 3


class ConfigError(EmbedkitError, ValueError):
    category = "config"
    exit_code = 2


class NonFiniteError(EmbedkitError, ArithmeticError):
    category = "numeric"
    exit_code = 4


class GradCheckError(NonFiniteError):
    pass


class LoadError(EmbedkitError):
    category = "load"
    exit_code = 5


class ManifestError(EmbedkitError, ValueError):
    category = "manifest"
    exit_code = 5


class DatasetError(EmbedkitError, ValueError):
    category = "dataset"
    exit_code = 6


class TrainingDiverged(NonFiniteError):
    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
