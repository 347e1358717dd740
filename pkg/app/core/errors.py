"""Exception hierarchy shared by every engine module."""


class HrSegError(Exception):
    """Base class for all engine errors."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ShapeError(HrSegError):
    code = "shape"


class ConfigError(HrSegError):
    code = "config"


class DataError(HrSegError):
    code = "data"


class NumericError(HrSegError):
    code = "numeric"


class StateError(HrSegError):
    code = "state"


class FormatError(HrSegError):
    code = "format"


class IntegrityError(HrSegError):
    code = "integrity"


class DatasetError(HrSegError):
    code = "dataset"


class ArtifactIOError(HrSegError):
    code = "io"


class UsageError(HrSegError):
    code = "usage"
