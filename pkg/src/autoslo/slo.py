"""SLO specification and the three-way SLO check."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

LATENCY = "latency_p90_ms"
SUCCESS_RATE = "success_rate"
ABOVE = "violating_when_above"
BELOW = "violating_when_below"


class Status(str, Enum):
    VIOLATED = "Violated"
    OVER_PROVISIONED = "OverProvisioned"
    OK = "Ok"


@dataclass(frozen=True)
class SloSpec:
    metric: str
    threshold: float
    margin: float
    direction: str = ""

    def __post_init__(self):
        if self.metric not in (LATENCY, SUCCESS_RATE):
            raise ValueError(f"unknown SLO metric {self.metric!r}")
        expected = ABOVE if self.metric == LATENCY else BELOW
        if not self.direction:
            object.__setattr__(self, "direction", expected)
        elif self.direction != expected:
            raise ValueError(f"{self.metric} SLOs must use direction {expected}")
        if self.threshold <= 0:
            raise ValueError("SLO threshold must be positive")
        if self.direction == ABOVE and not self.margin < self.threshold:
            raise ValueError("latency margin must be below the threshold")
        if self.direction == BELOW and not self.margin > self.threshold:
            raise ValueError("success-rate margin must be above the threshold")

    @classmethod
    def latency(cls, threshold=500.0, margin=300.0):
        return cls(LATENCY, threshold, margin)

    @classmethod
    def success_rate(cls, threshold=0.95, margin=0.98):
        return cls(SUCCESS_RATE, threshold, margin)

    def violates(self, value: float) -> bool:
        if self.direction == ABOVE:
            return value > self.threshold
        return value < self.threshold

    def over_provisioned(self, value: float) -> bool:
        if self.direction == ABOVE:
            return value < self.margin
        # a success rate that reaches the margin already counts
        return value >= self.margin


def check_slo(snapshot, slo: SloSpec) -> Status:
    """Classify one snapshot; idle windows are always Ok."""
    if snapshot.qps == 0:
        return Status.OK
    value = snapshot.value(slo.metric)
    if slo.violates(value):
        return Status.VIOLATED
    if slo.over_provisioned(value):
        return Status.OVER_PROVISIONED
    return Status.OK
