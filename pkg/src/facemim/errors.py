"""Exception types shared across the package.

ValidationError covers everything a caller got wrong (bad files, bad
configs, degenerate inputs) and maps to CLI exit code 3; anything else that
escapes is a runtime failure (exit code 4).
"""


class ValidationError(ValueError):
    """Input, file, or configuration failed validation."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss; carries a diagnostic record."""

    def __init__(self, message: str, record: dict | None = None):
        super().__init__(message)
        self.record = record or {}
