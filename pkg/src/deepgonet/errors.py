"""Exception hierarchy. The CLI maps InputError to exit 2 and NumericalError to exit 3."""


class DeepGONetError(Exception):
    pass


class InputError(DeepGONetError):
    """Bad input data, configuration, or file content."""


class OboParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class OntologyValidationError(InputError):
    pass


class TermLookupError(InputError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class DomainMismatchError(InputError):
    pass


class IngestionError(InputError):
    pass


class EncodingError(InputError, ValueError):
    pass


class DatasetError(InputError):
    pass


class ShapeError(InputError, ValueError):
    pass


class ConfigError(InputError, ValueError):
    pass


class CheckpointError(InputError):
    """Checkpoint or container file is corrupt, truncated, or incompatible."""


class NumericalError(DeepGONetError):
    pass
