"""Exception types shared across the toolkit.

The CLI maps each family to an exit code:
    ConfigError      -> 2  (usage, config conflicts, malformed inputs)
    MissingDataError -> 3  (referenced files that do not exist)
    DomainError      -> 4  (mathematically undefined requests)
"""


class ConfigError(ValueError):
    """Invalid flags, presets or configuration values"""


class MetadataError(ConfigError):
    """Metadata CSV could not be parsed"""


class NpyFormatError(ConfigError):
    """NPY file is malformed or uses an unsupported layout"""


class CheckpointError(ConfigError):
    """Checkpoint directory is missing pieces, truncated or from another version"""


class MissingDataError(FileNotFoundError):
    """Files referenced by metadata or flags are not on disk"""

    def __init__(self, message: str, missing=None):
        super().__init__(message)
        self.missing = list(missing or [])


class DomainError(ValueError):
    """Request is well-formed but undefined for the given data"""


class ClassWeightError(DomainError):
    """A class has zero samples, so its inverse-frequency weight is undefined"""

    def __init__(self, message: str, class_index: int, class_name: str = None):
        super().__init__(message)
        self.class_index = class_index
        self.class_name = class_name


class RocUndefinedError(DomainError):
    """ROC needs at least one positive and one negative label"""
