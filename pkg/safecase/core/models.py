from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any


class ExitCode(IntEnum):
    OK = 0
    VERDICT_FAILED = 1
    USAGE = 2
    INTERNAL = 3


@dataclass
class CommandOutcome:
    """Result of one command: verdict flag, JSON payload, human lines and, once run, captured streams."""

    ok: bool
    payload: dict[str, Any] = field(default_factory=dict)
    lines: list[str] = field(default_factory=list)
    code: ExitCode | None = None
    stdout: str = ""
    stderr: str = ""

    @property
    def exit_code(self) -> ExitCode:
        if self.code is not None:
            return self.code
        return ExitCode.OK if self.ok else ExitCode.VERDICT_FAILED

    def to_dict(self) -> dict[str, Any]:
        return {"ok": self.ok, **self.payload}
