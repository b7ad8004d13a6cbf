"""Exception hierarchy shared by every engine module."""


class SerError(Exception):
    """Base class for all engine errors."""


class DecodeError(SerError):
    """Malformed RIFF/WAVE input."""

    def __init__(self, chunk, message):
        self.chunk = chunk
        super().__init__(f"{chunk}: {message}")


class UnsupportedFormatError(SerError):
    pass


class ParseError(SerError):
    """A RAVDESS filename that does not follow the 7-field grammar."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ParameterError(SerError, ValueError):
    pass


class PolicyError(SerError, ValueError):
    pass


class ShapeError(SerError, ValueError):
    pass


class TrainingError(SerError):
    pass


class CheckpointError(SerError):
    pass


class FeatureFileError(SerError):
    pass


class ConfigError(SerError):
    """Carries every problem found in a config, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class StageError(SerError):
    """An external stage failed: error response, transport failure or timeout."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


class StageBindingError(StageError):
    """The stage endpoint could not be reached at all."""


class ProtocolError(StageError):
    """The stage answered with something that is not a valid StageResponse."""
