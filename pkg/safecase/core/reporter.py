from __future__ import annotations

import json
from dataclasses import asdict
from fractions import Fraction
from typing import Any, Iterable, Sequence

from rich.console import Console
from rich.markup import escape
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from safecase.core.units import format_decimal


class Reporter:
    def __init__(
        self,
        json_output: bool = False,
        quiet: bool = False,
        progress: bool = True,
    ) -> None:
        self.json_output = json_output
        self.quiet = quiet
        self.progress_enabled = progress
        self.console = Console(highlight=False)
        self.err_console = Console(stderr=True, highlight=False)

    def progress(self, description: str):
        if not self.progress_enabled or self.quiet or self.json_output:
            return _NullProgress()
        return Progress(
            SpinnerColumn(),
            TextColumn(f"[progress.description]{description}"),
            BarColumn(),
            TextColumn("{task.completed}/{task.total} cells"),
            TimeElapsedColumn(),
            console=self.err_console,
            transient=True,
        )

    def info(self, message: str) -> None:
        if self.quiet or self.json_output:
            return
        self.console.print(message, markup=False, soft_wrap=True)

    def write(self, text: str) -> None:
        if self.quiet:
            return
        self.console.out(text, end="", highlight=False)

    def error(self, message: str) -> None:
        self.err_console.print(f"[red]error:[/red] {escape(message)}", soft_wrap=True)

    def table(self, title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
        if self.quiet or self.json_output:
            return
        table = Table(title=title)
        for column in columns:
            table.add_column(column)
        for row in rows:
            table.add_row(*(escape(str(cell)) for cell in row))
        self.console.print(table)

    def emit_json(self, payload: Any) -> None:
        if self.quiet:
            return
        self.console.print_json(json.dumps(payload, default=_json_default))


class _NullProgress:
    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        return False

    def add_task(self, *args, **kwargs):
        return None

    def update(self, *args, **kwargs):
        return None

    def advance(self, *args, **kwargs):
        return None


def _json_default(obj: Any) -> Any:
    if isinstance(obj, Fraction):
        return format_decimal(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    try:
        return asdict(obj)
    except TypeError:
        return str(obj)
