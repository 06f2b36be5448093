from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from safecase.core.errors import CertificateDecodeError
from safecase.engine.certificate import CertificateVerdict, check_certificate, read_certificate
from safecase.engine.gsn import GoalStructure, solutions
from safecase.engine.scenario import ScenarioParams
from safecase.utils.hash import blake3_file

logger = logging.getLogger(__name__)

UNREFERENCED = "unreferenced"
MISSING = "missing"
UNDECODABLE = "undecodable"
VALID = "valid"
INVALID = "invalid"


@dataclass
class EvidenceCheck:
    solution: str
    ref: str | None
    path: Path | None = None
    status: str = UNREFERENCED
    verdict: CertificateVerdict | None = None
    detail: str = ""
    digest: str | None = None

    @property
    def failed(self) -> bool:
        return self.status in (MISSING, UNDECODABLE, INVALID)

    def to_dict(self) -> dict[str, Any]:
        return {
            "solution": self.solution,
            "evidence": self.ref,
            "path": str(self.path) if self.path else None,
            "status": self.status,
            "reason": self.verdict.reason if self.verdict else None,
            "detail": self.detail,
            "blake3": self.digest,
        }


def check_evidence(
    gs: GoalStructure,
    base_dir: Path,
    params: ScenarioParams | None = None,
    jobs: int = 1,
    on_cell: Callable[[int], None] | None = None,
) -> list[EvidenceCheck]:
    """Check every Solution's certificate, resolving references against ``base_dir``.

    Without ``params`` each certificate is checked against the parameters it embeds.
    """
    checks: list[EvidenceCheck] = []
    for node in solutions(gs):
        check = EvidenceCheck(node.id, node.evidence_ref)
        checks.append(check)
        if node.evidence_ref is None:
            continue
        check.path = base_dir / node.evidence_ref
        if not check.path.is_file():
            check.status = MISSING
            check.detail = f"{check.path} does not exist"
            continue
        check.digest = blake3_file(check.path)
        try:
            cert = read_certificate(check.path)
        except CertificateDecodeError as exc:
            check.status = UNDECODABLE
            check.detail = str(exc)
            continue
        check.verdict = check_certificate(cert, params or cert.params, jobs=jobs, on_cell=on_cell)
        check.status = VALID if check.verdict.valid else INVALID
        check.detail = str(check.verdict)
        logger.info("%s -> %s: %s", node.id, node.evidence_ref, check.status)
    return checks
