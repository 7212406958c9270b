"""Structured results of statistical and assumption checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = ["VerificationReport", "to_jsonable"]


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


@dataclass
class VerificationReport:
    """Outcome of one check.

    ``checks`` maps sub-criterion names to booleans; ``passed`` is their
    conjunction unless the report is ``skipped`` (degenerate input), in which
    case it is True and ``skipped`` explains why.
    """

    name: str
    params: dict = field(default_factory=dict)
    estimates: list = field(default_factory=list)
    se: list = field(default_factory=list)
    slope: float | None = None
    ci: tuple | None = None
    tolerance: Any = None
    checks: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    runtime: float = 0.0
    skipped: str | None = None

    @property
    def passed(self) -> bool:
        if self.skipped:
            return True
        return bool(self.checks) and all(bool(v) for v in self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v]

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = {
            "name": self.name,
            "params": self.params,
            "estimates": self.estimates,
            "se": self.se,
            "slope": self.slope,
            "ci": list(self.ci) if self.ci is not None else None,
            "tolerance": self.tolerance,
            "checks": self.checks,
            "pass": self.passed,
            "skipped": self.skipped,
            "details": self.details,
            "provenance": self.provenance,
        }
        if include_runtime:
            d["runtime"] = self.runtime
        return to_jsonable(d)

    def to_json(self, include_runtime: bool = True, **kw) -> str:
        kw.setdefault("indent", 2)
        kw.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(include_runtime), **kw)

    def summary(self) -> str:
        status = "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL")
        lines = [f"[{status}] {self.name}"]
        if self.skipped:
            lines.append(f"  skipped: {self.skipped}")
        for k, v in self.checks.items():
            lines.append(f"  {'ok  ' if v else 'FAIL'} {k}")
        if self.slope is not None:
            ci = f" ci={tuple(round(c, 4) for c in self.ci)}" if self.ci else ""
            lines.append(f"  slope={self.slope:.4f}{ci}")
        if self.estimates:
            est = np.round(np.asarray(self.estimates, dtype=float), 5).tolist()
            lines.append(f"  estimates={est}")
        return "\n".join(lines)

    def __str__(self) -> str:
        return self.summary()
