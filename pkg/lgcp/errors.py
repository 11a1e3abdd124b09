from __future__ import annotations

from typing import Any


class LGCPError(Exception):
    """Root of every error raised by the lgcp package."""

    exit_code = 1

    def context(self) -> dict[str, Any]:
        return {}


class InvalidInputError(LGCPError, ValueError):
    exit_code = 2


class ConfigError(InvalidInputError):
    def __init__(self, message: str, key: str = "", line: int | None = None) -> None:
        super().__init__(message)
        self.key = key
        self.line = line

    def context(self) -> dict[str, Any]:
        return {"key": self.key, "line": self.line}


class DataFormatError(InvalidInputError):
    def __init__(self, message: str, path: str = "", line: int | None = None) -> None:
        super().__init__(message)
        self.path = path
        self.line = line

    def context(self) -> dict[str, Any]:
        return {"path": self.path, "line": self.line}


class InsufficientDataError(InvalidInputError):
    pass


class InsufficientSamplesError(InvalidInputError):
    pass


class NumericalError(LGCPError, ArithmeticError):
    exit_code = 3


class EmbeddingError(NumericalError):
    def __init__(self, message: str, deficit: float) -> None:
        super().__init__(message)
        self.deficit = deficit

    def context(self) -> dict[str, Any]:
        return {"deficit": self.deficit}


class NumericalOverflowError(NumericalError):
    def __init__(self, message: str, max_linear_predictor: float) -> None:
        super().__init__(message)
        self.max_linear_predictor = max_linear_predictor

    def context(self) -> dict[str, Any]:
        return {"max_linear_predictor": self.max_linear_predictor}


class OptimizationError(NumericalError):
    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def context(self) -> dict[str, Any]:
        return {"diagnostics": self.diagnostics}


class DegenerateRegionError(NumericalError):
    def __init__(self, message: str, region_id: int) -> None:
        super().__init__(message)
        self.region_id = region_id

    def context(self) -> dict[str, Any]:
        return {"region_id": self.region_id}


class ChainError(NumericalError):
    def __init__(self, message: str, iteration: int) -> None:
        super().__init__(message)
        self.iteration = iteration

    def context(self) -> dict[str, Any]:
        return {"iteration": self.iteration}
