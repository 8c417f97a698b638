"""Pass/fail validation reports with violation witnesses.

A report never hides failures behind an exception: validators return the
full list of violating witnesses so callers (and certificates) can show
exactly what broke.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .rationals import rat_json


@dataclass(frozen=True)
class Violation:
    rule: str
    witness: tuple
    message: str

    def to_json(self) -> dict:
        return {
            "rule": self.rule,
            "witness": [_jsonable(w) for w in self.witness],
            "message": self.message,
        }


@dataclass(frozen=True)
class ValidationReport:
    subject: str
    checked: tuple[str, ...]
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def require(self) -> "ValidationReport":
        if not self.ok:
            first = self.violations[0]
            raise ValueError(
                f"{self.subject}: {len(self.violations)} violation(s); "
                f"first: {first.rule} {first.message}"
            )
        return self

    def to_json(self) -> dict:
        return {
            "subject": self.subject,
            "checked": list(self.checked),
            "ok": self.ok,
            "violations": [v.to_json() for v in self.violations],
        }


def _jsonable(value):
    from fractions import Fraction

    if isinstance(value, (int, Fraction)) and not isinstance(value, bool):
        return rat_json(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value
