"""Exception types shared across the package."""


class HetdiagError(Exception):
    """Base class for all package errors."""


class ValidationError(HetdiagError, ValueError):
    """A configuration or input value violates a documented invariant."""


class PlacementError(ValidationError):
    """A network layout cannot be realized under its geometric constraints."""


class ScenarioFormatError(ValidationError):
    """A scenario file failed to parse; carries a line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class ContractViolation(HetdiagError, RuntimeError):
    """An internal operation was called outside its contract."""


class DegenerateTrainingError(HetdiagError, RuntimeError):
    """Training data contains a single class; no discriminative model exists."""
