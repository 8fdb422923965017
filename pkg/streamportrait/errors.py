class StreamPortraitError(Exception):
    """Base class for every error raised by the package."""


class InvalidInputError(StreamPortraitError, ValueError):
    """An argument is outside its documented range or has the wrong shape."""


class ConfigError(InvalidInputError):
    """Malformed configuration file or inconsistent configuration values."""


class CheckpointError(StreamPortraitError):
    """Checkpoint container could not be read, or is not valid for this use."""


class DatasetError(StreamPortraitError):
    """Dataset root is missing, empty, or would be overwritten."""
