"""Exception types shared across the package."""


class CascadeError(Exception):
    """Base class for all seqcascade errors."""


class ShapeError(CascadeError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigError(CascadeError):
    """A configuration value is out of range or inconsistent."""


class EmptyInputError(CascadeError):
    """An operation received an empty sequence where at least one element is required."""


class MaskError(CascadeError):
    """Every position is masked out, leaving nothing to attend to or normalize over."""


class DegenerateBatchError(CascadeError):
    """A loss was requested over a batch in which every position is masked."""


class DataError(CascadeError):
    """Malformed corpus data.

    `location` carries "path:line" when the problem can be pinned to a line.
    """

    def __init__(self, message, location=None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class TagError(CascadeError):
    """A morphosyntactic tag cannot be componentized or reconstructed.

    `span` names the offending substring or component.
    """

    def __init__(self, message, span=None):
        self.span = span
        if span is not None:
            message = f"{message} (offending span: {span!r})"
        super().__init__(message)


class SchemaError(CascadeError):
    """Data, vocabulary, or checkpoint contents disagree with a level schema."""


class CheckpointError(CascadeError):
    """A checkpoint file is missing, corrupt, or has an unsupported version."""


class TrainingError(CascadeError):
    """Training diverged or the optimizer received invalid gradients."""
