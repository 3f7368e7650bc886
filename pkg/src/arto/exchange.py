"""Latest-value slots shared between the plant and the planner workers."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .problem import FootstepPlan, Source
from .rk4_optimizer import WarmStart, shift_plan, warm_start_plan


@dataclass(frozen=True)
class PublishedPlan:
    """A solver result together with the plant state it was computed for.

    ``stamp`` orders publications: (tick, position within the tick).
    """

    plan: FootstepPlan
    source: Source
    stamp: tuple[int, int]
    sample_time: float
    sample_step: int
    sample_tis: float
    feasible: bool
    objective: float = float("nan")
    valid: bool = True

    def aligned(self, step_count: int, time_in_step: float) -> FootstepPlan:
        """The plan re-expressed for the plant's current step and phase.

        Steps completed since sampling are dropped by shifting; the remaining
        time of the current step is measured from the present.
        """
        k = step_count - self.sample_step
        if k <= 0:
            d = self.plan.durations.copy()
            d[0] = max(self.sample_tis + d[0] - time_in_step, 0.0)
            return self.plan.with_(durations=d)
        plan = self.plan
        for _ in range(k - 1):
            plan = shift_plan(plan)
        return warm_start_plan(WarmStart(plan, time_in_step, step_taken=True))

    def overdue(self, step_count: int, time_in_step: float, tol: float = 1e-9) -> bool:
        """True when the planned end of the current step lies in the past."""
        total, _ = self.step_target(step_count)
        return total < time_in_step - tol

    def step_target(self, step_count: int) -> tuple[float, np.ndarray]:
        """(full duration of the current step, where the next foot lands)."""
        k = step_count - self.sample_step
        if k <= 0:
            return self.sample_tis + float(self.plan.durations[0]), self.plan.feet[0]
        plan = self.plan
        for _ in range(k):
            plan = shift_plan(plan)
        return float(plan.durations[0]), plan.feet[0]


class LatestValue:
    """Single-writer slot holding an immutable value.

    Readers take the current reference without locking; a reference swap is
    atomic so a reader never sees a partially written value. The lock only
    serialises writers in case more than one thread publishes.
    """

    def __init__(self, value=None):
        self._value = value
        self._version = 0
        self._write = threading.Lock()

    def __deepcopy__(self, memo):
        # values are immutable; the copy only needs its own lock
        out = LatestValue(self._value)
        out._version = self._version
        return out

    def get(self):
        return self._value

    @property
    def version(self) -> int:
        return self._version

    def set(self, value):
        with self._write:
            self._value = value
            self._version += 1


@dataclass(frozen=True)
class AcceptedPlan:
    record: PublishedPlan
    seq: int
    degraded: bool


class PlanExchange:
    """Per-source latest publications plus the accepted plan and its sequence."""

    def __init__(self):
        self.slots = {s: LatestValue() for s in Source}
        self.accepted = LatestValue()

    def publish(self, record: PublishedPlan):
        self.slots[record.source].set(record)

    def latest(self, source: Source) -> PublishedPlan | None:
        return self.slots[source].get()

    def accept(self, record: PublishedPlan, degraded: bool = False) -> AcceptedPlan:
        cur = self.accepted.get()
        seq = 1 if cur is None else cur.seq + 1
        out = AcceptedPlan(record, seq, degraded)
        self.accepted.set(out)
        return out

    def current(self) -> AcceptedPlan | None:
        return self.accepted.get()
