"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from typing import Optional


class LsapError(Exception):
    exit_code = 1


class ConfigError(LsapError, ValueError):
    exit_code = 2


class ParityError(ConfigError):
    """Baseline compute cannot be matched to the attack within tolerance."""


class ArtifactError(LsapError):
    exit_code = 3


class FingerprintError(ArtifactError):
    pass


class CheckpointFormatError(ArtifactError):
    pass


class ScoreFileError(ArtifactError):
    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SplitViolationError(ArtifactError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class InsufficientDataError(ArtifactError, ValueError):
    pass


class NumericalError(LsapError, ArithmeticError):
    exit_code = 4

    def __init__(self, message: str, op: Optional[str] = None, step: Optional[int] = None):
        if step is not None:
            message = f"{message} (reverse step t={step})"
        super().__init__(message)
        self.op = op
        self.step = step


class ShapeError(LsapError, ValueError):
    exit_code = 4
