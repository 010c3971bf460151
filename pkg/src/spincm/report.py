"""Machine-readable verification reports.

One canonical schema (``spincm.report.v1``): a list of named checks, each
with a residual, a tolerance and a pass flag, plus run metadata.  A report
passes iff every check passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "residual": float(self.residual),
            "tolerance": float(self.tolerance),
            "passed": self.passed,
        }


@dataclass
class VerificationReport:
    checks: list[CheckResult] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, residual: float, tolerance: float) -> CheckResult:
        result = CheckResult(name, float(residual), float(tolerance))
        self.checks.append(result)
        return result

    def extend(self, other: "VerificationReport", prefix: str = "") -> None:
        for c in other.checks:
            self.checks.append(CheckResult(prefix + c.name, c.residual, c.tolerance))

    def failed_names(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "schema": "spincm.report.v1",
            "overall_passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "metadata": dict(self.metadata),
        }

    def summary_lines(self) -> list[str]:
        lines = []
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            lines.append(f"[{mark}] {c.name}: residual {c.residual:.3e} (tol {c.tolerance:.1e})")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return lines


def validate_report_dict(d: dict) -> None:
    """Raise ValueError unless ``d`` conforms to spincm.report.v1."""
    if not isinstance(d, dict) or d.get("schema") != "spincm.report.v1":
        raise ValueError("not a spincm.report.v1 document")
    for key in ("overall_passed", "checks", "metadata"):
        if key not in d:
            raise ValueError(f"report missing key '{key}'")
    if not isinstance(d["checks"], list):
        raise ValueError("report 'checks' must be a list")
    for c in d["checks"]:
        for key in ("name", "residual", "tolerance", "passed"):
            if key not in c:
                raise ValueError(f"check entry missing key '{key}'")
    expected = all(bool(c["passed"]) for c in d["checks"])
    if bool(d["overall_passed"]) != expected:
        raise ValueError("overall_passed inconsistent with individual checks")
