"""Exception hierarchy shared across modules."""
from __future__ import annotations

from dataclasses import dataclass


class ReboundError(Exception):
    """Base class for all package errors."""


class LogLoadError(ReboundError):
    """A required log file is missing or unreadable; message names the file."""


@dataclass(frozen=True)
class Violation:
    """One validation finding against a log or bundle."""

    file: str
    rule: str
    message: str
    frame_id: str | None = None
    instance_id: str | None = None

    def render(self) -> str:
        parts = [self.file]
        if self.frame_id is not None:
            parts.append(f"frame={self.frame_id}")
        if self.instance_id is not None:
            parts.append(f"box={self.instance_id}")
        parts.append(f"rule={self.rule}")
        return " ".join(parts) + f": {self.message}"


class LogValidationError(ReboundError):
    """Raised when a log or bundle violates a format invariant."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        summary = "; ".join(v.render() for v in violations[:3])
        extra = f" (+{len(violations) - 3} more)" if len(violations) > 3 else ""
        super().__init__(f"{len(violations)} validation violation(s): {summary}{extra}")


class ConversionError(ReboundError):
    """Dataset adapter import/export failure; message names table and token."""


class EditRejected(ReboundError):
    """Edit command refused; session state is unchanged."""


class UnknownTarget(EditRejected):
    """Command addressed a frame or box that does not exist."""


class DegenerateDrag(ReboundError):
    """Drag ray (near-)parallel to the picking plane; treat as a no-op."""


class DegenerateView(ReboundError):
    """View direction is too close to vertical for a vertical drag."""
