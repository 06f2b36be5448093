from __future__ import annotations

from typing import TYPE_CHECKING, Sequence

if TYPE_CHECKING:
    from safecase.engine.casefile import ParseError


class SafecaseError(Exception):
    """Base class for every error raised by safecase."""


class CaseFileError(SafecaseError):
    def __init__(self, diagnostics: Sequence["ParseError"]) -> None:
        self.diagnostics = list(diagnostics)
        first = self.diagnostics[0] if self.diagnostics else None
        summary = str(first) if first else "invalid case file"
        if len(self.diagnostics) > 1:
            summary += f" (+{len(self.diagnostics) - 1} more)"
        super().__init__(summary)


class TableError(SafecaseError):
    pass


class ScenarioConfigError(SafecaseError):
    pass


class StructureError(SafecaseError):
    pass


class QrnDomainError(SafecaseError):
    pass


class TraceError(SafecaseError):
    pass


class CertificateDecodeError(SafecaseError):
    def __init__(self, message: str, offset: int, line: int) -> None:
        self.offset = offset
        self.line = line
        super().__init__(f"line {line} (byte {offset}): {message}")
