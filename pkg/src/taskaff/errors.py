"""Exception types shared across the package."""


class TaskAffError(Exception):
    """Base class for all domain errors raised by this package."""


class InvalidInputError(TaskAffError):
    """An argument violates a documented precondition."""


class ParseError(TaskAffError):
    """A text input file could not be parsed."""

    def __init__(self, message, line_number=None):
        super().__init__(message if line_number is None else f"line {line_number}: {message}")
        self.line_number = line_number


class ShortfallError(InvalidInputError):
    """Fewer items are available than were requested."""

    def __init__(self, message, available):
        super().__init__(f"{message} (available: {available})")
        self.available = available


class ConvergenceError(TaskAffError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual: {residual:g})")
        self.residual = residual


class TrainingError(TaskAffError):
    """Model training failed (non-finite loss or a propagated failure)."""

    def __init__(self, message, epoch=None, subset_index=None, group_index=None):
        parts = [message]
        if epoch is not None:
            parts.append(f"epoch {epoch}")
        if subset_index is not None:
            parts.append(f"subset {subset_index}")
        if group_index is not None:
            parts.append(f"group {group_index}")
        super().__init__(", ".join(parts))
        self.epoch = epoch
        self.subset_index = subset_index
        self.group_index = group_index


class CoverageError(TaskAffError):
    """A required pair or task is not covered by the available data/models."""

    def __init__(self, message, uncovered=None):
        super().__init__(message)
        self.uncovered = uncovered


class DegenerateInputError(InvalidInputError):
    """Input is formally valid but carries no usable signal (e.g. constant matrix)."""


class GenerationError(TaskAffError):
    """Synthetic instance generation could not satisfy its separation targets."""

    def __init__(self, message, achieved_within, achieved_between):
        super().__init__(
            f"{message} (achieved within={achieved_within:g}, between={achieved_between:g})"
        )
        self.achieved_within = achieved_within
        self.achieved_between = achieved_between


class EmptyDomainError(TaskAffError):
    """A probe or statistic has an empty domain (no admissible pairs)."""


class MissingInputError(TaskAffError):
    """An expected upstream artifact is absent."""

    def __init__(self, expected_path):
        super().__init__(f"missing expected input: {expected_path}")
        self.expected_path = expected_path
