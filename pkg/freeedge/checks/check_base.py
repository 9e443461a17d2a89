from __future__ import annotations

import re
from abc import ABC, abstractmethod
from typing import TYPE_CHECKING

from freeedge.common.errors import ErrorCode
from freeedge.common.feedback import Finding, Severity
from freeedge.common.logging import get_logger

if TYPE_CHECKING:
    from freeedge.numerics.superconv import Certificate


class Check(ABC):
    """Base class for checks that inspect a finished certificate."""

    __symbolic_name__: str | None = None

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        # Only fill in if not explicitly provided or empty
        if not getattr(cls, "__symbolic_name__", None):
            cls.__symbolic_name__ = cls._generate_symbolic_name(cls.__name__)

    def __init__(self):
        self.findings: list[Finding] = []
        self.logger = get_logger(f"checks.{self.__symbolic_name__}")

    @staticmethod
    def _generate_symbolic_name(name: str) -> str:
        # split Camel/PascalCase, keeping acronyms and digits together
        name = name.lstrip("_")
        parts = re.findall(r"[A-Z]+(?=[A-Z][a-z]|$)|[A-Z]?[a-z]+|\d+", name)
        return "-".join(p.lower() for p in parts)

    @property
    def description(self) -> str:
        return (self.__doc__ or "").strip().splitlines()[0] if self.__doc__ else ""

    def process(self, certificate: Certificate) -> list[Finding]:
        """Run the check and return its findings."""
        self.findings = []
        self.logger.info(f"Checking certificate of {certificate.row_name}")
        self.inspect(certificate)
        self.logger.info(f"{len(self.findings)} findings")
        return self.findings

    @abstractmethod
    def inspect(self, certificate: Certificate) -> None:
        """Examine the certificate and record findings with create_finding()."""
        raise NotImplementedError("Subclasses must implement inspect()")

    def create_finding(
        self,
        message: str,
        rule_id: ErrorCode,
        passed: bool,
        severity: Severity | None = None,
        **meta: float | str,
    ) -> Finding:
        """
        Record a finding; failed findings default to WARNING severity.

        Args:
            message: Human-readable verdict
            rule_id: Stable identifier
            passed: Whether the condition holds
            severity: Overrides the default severity
            meta: Numbers behind the verdict
        """
        if severity is None:
            severity = Severity.INFO if passed else Severity.WARNING
        finding = Finding(
            message=message,
            rule_id=rule_id,
            check=self.__symbolic_name__ or "",
            severity=severity,
            passed=passed,
            meta=dict(meta),
        )

        if severity == Severity.ERROR:
            self.logger.error(f"[{rule_id.value}] {message}")
        elif severity == Severity.WARNING:
            self.logger.warning(f"[{rule_id.value}] {message}")
        else:
            self.logger.info(f"[{rule_id.value}] {message}")

        self.findings.append(finding)
        return finding
