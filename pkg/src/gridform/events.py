"""Timed scenario events (breaker operations, faults, reference changes)."""

from __future__ import annotations

from dataclasses import dataclass, field

ACTIONS = (
    "open_breaker",
    "close_breaker",
    "apply_fault",
    "clear_fault",
    "set_reference",
    "switch_mode",
)


@dataclass(frozen=True)
class SimEvent:
    """One scheduled action.

    time    : seconds, >= 0; events fire at the first step boundary >= time
    action  : one of ACTIONS
    target  : breaker/line id, bus id, or device id depending on the action
    params  : action-specific payload:
        apply_fault   -> {"r": float, "x": float}
        set_reference -> {"name": str, "value": float, "ramp": float}
        switch_mode   -> {"mode": str}
    order   : declaration index, breaks ties between simultaneous events
    """

    time: float
    action: str
    target: str
    params: dict = field(default_factory=dict)
    order: int = 0

    def __post_init__(self):
        if self.time < 0.0:
            raise ValueError(f"event time must be >= 0, got {self.time}")
        if self.action not in ACTIONS:
            raise ValueError(f"unknown event action {self.action!r}")


def sort_events(events: list[SimEvent]) -> list[SimEvent]:
    """Time order, declaration order on ties."""
    return sorted(events, key=lambda e: (e.time, e.order))
