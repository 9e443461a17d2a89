from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from enum import StrEnum

from freeedge.common.errors import ErrorCode


class Severity(StrEnum):
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"


@dataclass
class Finding:
    """
    One verdict produced by a certificate check.
    """

    message: str  # human-readable description
    rule_id: ErrorCode  # stable identifier, e.g. "HYP001"
    check: str  # symbolic name of the check that produced it
    severity: Severity = Severity.INFO
    passed: bool = True
    meta: dict[str, float | str] = field(default_factory=dict)  # numbers behind the verdict
    id: str = field(default_factory=lambda: str(uuid.uuid4()))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "rule_id": self.rule_id,
            "check": self.check,
            "severity": self.severity.value,
            "passed": self.passed,
            "message": self.message,
            "meta": dict(self.meta),
        }

    def __str__(self) -> str:
        return f"{self.severity.value}: [{self.rule_id.value}] {self.check}: {self.message}"
