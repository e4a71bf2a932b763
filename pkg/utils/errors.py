from typing import Any, Optional


class VSRError(Exception):
    """Base class for every error raised on purpose by the library.

    Each subclass carries the process exit code the CLI uses when the
    error escapes a task.
    """

    exit_code: int = 1


class ContractError(VSRError, ValueError):
    """A caller broke an operation's documented precondition."""

    exit_code = 2


class ConfigurationError(VSRError):
    """Invalid hyperparameters, presets or layer geometry."""

    exit_code = 2


class ShapeError(ConfigurationError, ValueError):
    """Tensor extents that cannot be combined."""

    def __init__(self, message: str, *shapes: tuple[int, ...]) -> None:
        if shapes:
            message = f"{message} (shapes: {', '.join(str(tuple(s)) for s in shapes)})"
        super().__init__(message)
        self.shapes = shapes


class DataError(VSRError):
    """Corpus, manifest or feature file content that cannot be used."""

    exit_code = 3


class NumericError(VSRError):
    """Non-finite values detected during a forward or optimizer step.

    Parameters
    ----------
    message: str
        Human readable description.
    diagnostics: dict, optional
        Context such as the step, parameter name or block index.
    """

    exit_code = 4

    def __init__(self, message: str, diagnostics: Optional[dict[str, Any]] = None) -> None:
        self.diagnostics = diagnostics or {}
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} [{details}]"
        super().__init__(message)
