"""Learning-rate schedules with a linear warmup over the first 10 % of steps."""

from __future__ import annotations

import math
from dataclasses import dataclass

from bikit.errors import PlanError

KINDS = ("constant-with-warmup", "cosine-with-warmup")
# Short ids used in plan documents and tables.
KIND_IDS = {"CtW": "constant-with-warmup", "CeW": "cosine-with-warmup"}


@dataclass(frozen=True)
class LrSchedule:
    kind: str
    base_lr: float
    total_steps: int
    warmup_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlanError(f"unknown schedule kind {self.kind!r}", code="bad-schedule")
        if not self.base_lr > 0:
            raise PlanError("base_lr must be positive", code="bad-schedule")
        if not 0 < self.warmup_fraction < 1:
            raise PlanError("warmup_fraction must lie in (0, 1)", code="bad-schedule")
        if int(self.total_steps) != self.total_steps or self.total_steps < 1:
            raise PlanError("total_steps must be a positive integer", code="bad-schedule")

    @property
    def warmup_steps(self) -> int:
        # round half up; exact for the default fraction of 1/10
        if self.warmup_fraction == 0.1:
            return (self.total_steps + 5) // 10
        return math.floor(self.warmup_fraction * self.total_steps + 0.5)


def lr_at(schedule: LrSchedule, step: float) -> float:
    """Learning rate at ``step`` (0 <= step <= total_steps; fractional steps allowed)."""
    T = schedule.total_steps
    if not 0 <= step <= T:
        raise PlanError(f"step {step} outside [0, {T}]", code="bad-step")
    w = schedule.warmup_steps
    if step < w:
        return schedule.base_lr * step / w
    if schedule.kind == "constant-with-warmup":
        return schedule.base_lr
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - w) / (T - w)))
