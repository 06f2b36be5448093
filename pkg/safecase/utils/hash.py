from __future__ import annotations

from pathlib import Path
from typing import Iterable

from blake3 import blake3

DIGEST_ALGORITHM = "blake3"


def blake3_lines(lines: Iterable[str]) -> str:
    """Digest of LF-terminated UTF-8 lines."""
    hasher = blake3()
    for line in lines:
        hasher.update(line.encode("utf-8"))
        hasher.update(b"\n")
    return hasher.hexdigest()


def blake3_file(path: Path, chunk_size: int = 1024 * 1024) -> str:
    hasher = blake3()
    with path.open("rb") as handle:
        while chunk := handle.read(chunk_size):
            hasher.update(chunk)
    return hasher.hexdigest()
