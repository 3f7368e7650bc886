"""Asynchronous combination of the RK4 and gradient-descent planners.

In virtual mode everything is driven by an integer tick counter: the plant
ticks every ``plant_period``; a worker activating at tick k first publishes
the solve it started one period earlier, then samples the plant and starts
the next one. On shared ticks the order is plant, gd, rk4 (or baseline).
"""

from __future__ import annotations

import csv
import logging
import math
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .baseline import BaselineConfig, solve_baseline
from .exchange import AcceptedPlan, PlanExchange, PublishedPlan
from .gd_optimizer import DescentSettings, GradientDescentOptimizer
from .lip import ComState, FootPosition
from .problem import (PlanningProblem, PlanningState, Reference, Side, Source, is_feasible,
                      nominal_plan)
from .rk4_optimizer import RK4Optimizer
from .simulator import FallLimits, Impulse, Plant, StepEvent

log = logging.getLogger(__name__)

TRACE_HEADER = ["tick", "time_s", "event", "source", "seq", "feasible", "J", "com_x", "com_y",
                "com_vx", "com_vy", "foot_x", "foot_y", "dt_remaining"]

PLANNERS = ("arto", "rk4", "gd", "baseline")


class NotReady(RuntimeError):
    """No planner has produced a plan yet."""


@dataclass(frozen=True)
class ClockConfig:
    mode: str = "virtual"
    plant_period: float = 0.001
    gd_period: float = 0.004
    rk4_period: float = 0.04
    baseline_period: float = 0.002

    def __post_init__(self):
        if self.mode not in ("virtual", "wall"):
            raise ValueError(f"unknown clock mode {self.mode!r}")
        for name in ("plant_period", "gd_period", "rk4_period", "baseline_period"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def ticks(self, period: float) -> int:
        n = round(period / self.plant_period)
        if n < 1 or abs(n * self.plant_period - period) > 1e-9:
            raise ValueError(f"period {period} is not a multiple of the plant period")
        return n


@dataclass(frozen=True)
class Faults:
    disable_gd: bool = False
    disable_rk4: bool = False
    disable_baseline: bool = False
    # gradient rejected for every gd solve sampled inside [start, end)
    invalid_gradient: tuple[float, float] | None = None


@dataclass(frozen=True)
class Scenario:
    com: ComState
    support: FootPosition
    stance: Side = Side.LEFT
    swing: FootPosition | None = None
    time_in_step: float = 0.0
    planner: str = "arto"
    duration: float = 10.0
    # (time, vx_ref, vy_ref), sorted by time; the latest entry at or before t applies
    references: tuple = ((0.0, 0.0, 0.0),)
    impulses: tuple[Impulse, ...] = ()
    problem: PlanningProblem = field(default_factory=PlanningProblem)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    descent: DescentSettings = field(default_factory=DescentSettings)
    rk4_substeps: int = 6
    rk4_max_iter: int = 200
    reach_margin: float = 2e-3
    faults: Faults = field(default_factory=Faults)
    limits: FallLimits | None = None
    track_swing: bool = True
    swing_height: float = 0.05
    nominal_half_width: float = 0.15
    record_every: int = 10
    stale_after: float = 0.1

    def __post_init__(self):
        if self.planner not in PLANNERS:
            raise ValueError(f"unknown planner {self.planner!r}; expected one of {PLANNERS}")
        if not self.duration > 0:
            raise ValueError("duration must be positive")

    def reference(self, t: float) -> Reference:
        cur = (0.0, 0.0)
        for t0, vx, vy in self.references:
            if t0 <= t + 1e-12:
                cur = (vx, vy)
        return Reference(*cur)

    def fall_limits(self) -> FallLimits:
        return self.limits or FallLimits(l_max=self.problem.constraints.l_max)


@dataclass
class Trace:
    rows: list = field(default_factory=list)
    steps: list[StepEvent] = field(default_factory=list)
    fallen: bool = False
    fall_time: float | None = None
    fall_reason: str = ""
    failure: str = ""
    final_time: float = 0.0
    accepted: list = field(default_factory=list)
    solve_times: dict = field(default_factory=dict)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for row in self.rows:
                w.writerow([_fmt(v) for v in row])

    def events(self, name: str) -> list:
        return [r for r in self.rows if r[2] == name]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def arbitrate(rk4: PublishedPlan | None, gd: PublishedPlan | None,
              exchange: PlanExchange, now: tuple[int, float] | None = None
              ) -> tuple[PublishedPlan, bool]:
    """Pick the plan the plant should follow.

    The newest feasible publication wins, gd on equal stamps. With ``now``
    given as (step count, time in step), plans whose step time has already
    passed lose against plans that can still be executed as computed. When
    nothing is feasible the held plan is returned with the degraded flag set.
    """
    options = [r for r in (gd, rk4) if r is not None and r.feasible and r.valid]
    if now is not None:
        timely = [r for r in options if not r.overdue(*now)]
        options = timely or options
    if options:
        best = max(options, key=lambda r: (r.stamp, r.source == Source.GRADIENT_DESCENT))
        return best, False
    cur = exchange.current()
    if cur is not None:
        return cur.record, True
    if rk4 is None and gd is None:
        raise NotReady("no plan has been produced yet")
    return (gd or rk4), True


class Orchestrator:
    """Virtual-clock run loop; deep-copyable so sweeps can branch from a snapshot."""

    def __init__(self, scenario: Scenario, clock: ClockConfig | None = None):
        self.sc = scenario
        self.clock = clock or ClockConfig()
        sc = scenario
        self.problem = sc.problem
        self.plant = Plant(sc.problem.lip, sc.com, sc.support, sc.stance, sc.fall_limits(),
                           sc.swing, sc.swing_height, sc.track_swing, sc.time_in_step)
        for imp in sc.impulses:
            self.plant.add_impulse(imp)
        self.exchange = PlanExchange()
        self.rk4 = RK4Optimizer(sc.problem, sc.rk4_substeps, sc.rk4_max_iter,
                                reach_margin=sc.reach_margin)
        self.gd = GradientDescentOptimizer(sc.problem, sc.descent)
        self.tick = 0
        self.trace = Trace()
        self.pending: dict[Source, PublishedPlan | None] = {s: None for s in Source}
        self.own_last: dict[Source, PublishedPlan | None] = {s: None for s in Source}
        self.last_good = 0.0
        self.rk4_seen = None
        self.degraded = False
        dt = self.clock.plant_period
        self.workers = []
        use = {
            "arto": (Source.GRADIENT_DESCENT, Source.RK4),
            "rk4": (Source.RK4,),
            "gd": (Source.GRADIENT_DESCENT,),
            "baseline": (Source.BASELINE,),
        }[sc.planner]
        periods = {Source.GRADIENT_DESCENT: self.clock.gd_period, Source.RK4: self.clock.rk4_period,
                   Source.BASELINE: self.clock.baseline_period}
        for order, src in enumerate(use):
            self.workers.append((src, self.clock.ticks(periods[src]), order + 1))
        self.dt = dt
        self.solve_times = {src: [] for src in use}

    # -- helpers ---------------------------------------------------------------

    @property
    def time(self) -> float:
        return self.tick * self.dt

    def planning_state(self) -> PlanningState:
        p = self.plant
        return PlanningState(p.com, p.support, p.stance, max(p.time_in_step, 0.0))

    def _row(self, event, source="", seq=0, feasible="", J=float("nan"), foot=(float("nan"),) * 2,
             dt_remaining=float("nan")):
        p = self.plant
        self.trace.rows.append((self.tick, self.time, event, source, seq, feasible, J,
                                p.x, p.y, p.vx, p.vy, float(foot[0]), float(foot[1]),
                                dt_remaining))

    def _disabled(self, src: Source) -> bool:
        f = self.sc.faults
        return {Source.GRADIENT_DESCENT: f.disable_gd, Source.RK4: f.disable_rk4,
                Source.BASELINE: f.disable_baseline}.get(src, False)

    def _warm(self, src: Source):
        """Initial guess aligned to the plant, or None.

        Each worker continues from its own last valid solution, except that
        gd restarts from every RK4 solution the first time it sees it.
        """
        p = self.plant
        best = self.own_last[src]
        if src == Source.GRADIENT_DESCENT:
            rk = self.exchange.latest(Source.RK4)
            if rk is not None and rk.feasible and (rk.stamp != self.rk4_seen or best is None):
                best = rk
                self.rk4_seen = rk.stamp
        if best is None or not np.all(np.isfinite(best.plan.to_vector())):
            return None
        return best.aligned(p.step_count, p.time_in_step)

    # -- workers ---------------------------------------------------------------

    def _solve(self, src: Source, order: int) -> PublishedPlan:
        state = self.planning_state()
        ref = self.sc.reference(self.time)
        start = time.perf_counter()
        valid = True
        if src == Source.BASELINE:
            plan = solve_baseline(state, ref, self.problem, self.sc.baseline)
            if plan.feasible:
                plan = plan.with_(feasible=is_feasible(plan, state, self.problem))
            objective = float("nan")
        else:
            warm = self._warm(src)
            if src == Source.RK4:
                sol = self.rk4.solve(state, ref, warm)
            else:
                win = self.sc.faults.invalid_gradient
                self.gd.force_invalid = win is not None and win[0] <= self.time < win[1]
                if warm is None:
                    warm = nominal_plan(state, self.problem, self.sc.nominal_half_width)
                sol = self.gd.descend(warm, state, ref)
                valid = self.gd.last_status not in (2, 3)
            plan, objective = sol.plan, sol.objective
        self.solve_times[src].append(time.perf_counter() - start)
        return PublishedPlan(plan, src, (self.tick, order), self.time, self.plant.step_count,
                             state.time_in_step, bool(plan.feasible and valid), objective, valid)

    def _publish(self, rec: PublishedPlan):
        # publications are ordered by when they become visible, not when sampled
        rec = replace(rec, stamp=(self.tick, rec.stamp[1]))
        self.exchange.publish(rec)
        if rec.valid:
            self.own_last[rec.source] = rec
        self._row("publish", rec.source.value, 0, int(rec.feasible), rec.objective,
                  rec.plan.feet[0], rec.plan.durations[0])
        rk = self.exchange.latest(Source.RK4)
        other = self.exchange.latest(Source.BASELINE) if rec.source == Source.BASELINE else rk
        gd = self.exchange.latest(Source.GRADIENT_DESCENT)
        now = (self.plant.step_count, self.plant.time_in_step)
        if rec.source == Source.BASELINE:
            choice, degraded = arbitrate(other, None, self.exchange, now)
        else:
            choice, degraded = arbitrate(rk, gd, self.exchange, now)
        cur = self.exchange.current()
        if not degraded:
            self.last_good = self.time
        if not rec.feasible:
            self._row("discard", rec.source.value, 0, 0, rec.objective)
        if cur is None or choice is not cur.record or degraded != cur.degraded:
            if cur is None and not choice.feasible:
                self.degraded = True
                return
            acc = self.exchange.accept(choice, degraded)
            self.trace.accepted.append((self.tick, acc.seq, choice.source.value, choice.plan))
            p = self.plant
            aligned = choice.aligned(p.step_count, p.time_in_step)
            self._row("degraded" if degraded else "accept", choice.source.value, acc.seq,
                      int(choice.feasible), choice.objective, aligned.feet[0], aligned.durations[0])
        self.degraded = degraded

    def _worker_tick(self, src: Source, order: int):
        rec = self.pending[src]
        if rec is not None:
            self._publish(rec)
            self.pending[src] = None
        if self._disabled(src):
            return
        self.pending[src] = self._solve(src, order)

    # -- plant -----------------------------------------------------------------

    def _degraded_time(self) -> float:
        stale = self.time - self.last_good
        if self.degraded or stale > self.sc.stale_after:
            return stale
        return 0.0

    def _plant_tick(self):
        p = self.plant
        acc = self.exchange.current()
        step_total = foot = None
        if acc is not None:
            step_total, foot = acc.record.step_target(p.step_count)
        # fall accounting uses the degraded time at the end of this tick
        self.tick += 1
        event = p.tick(self.dt, step_total, foot, degraded_time=self._degraded_time())
        if event is not None:
            self.trace.steps.append(event)
            seq = acc.seq if acc is not None else 0
            self._row("step", acc.record.source.value if acc else "", seq, "", float("nan"),
                      event.foot, event.duration)
        elif self.sc.record_every and self.tick % self.sc.record_every == 0:
            self._row("state")
        if p.fallen and not self.trace.fallen:
            self.trace.fallen = True
            self.trace.fall_time = self.time
            self.trace.fall_reason = p.fall_reason
            self._row("fall", p.fall_reason)

    def _advance(self):
        """One plant period: plant first, then every worker due on this tick."""
        self._plant_tick()
        for src, every, order in self.workers:
            if self.tick % every == 0:
                self._worker_tick(src, order)

    def start(self):
        """Workers sample the initial state at tick 0."""
        if self.tick == 0 and not any(self.pending.values()):
            for src, _, order in self.workers:
                if not self._disabled(src):
                    self.pending[src] = self._solve(src, order)

    def run_until(self, t_end: float, stop_on_fall: bool = True) -> Trace:
        self.start()
        n_end = round(t_end / self.dt)
        try:
            while self.tick < n_end:
                self._advance()
                if self.trace.fallen and stop_on_fall:
                    break
        except Exception as exc:  # a worker failure ends the run with a record
            log.exception("run aborted")
            self.trace.failure = f"{type(exc).__name__}: {exc}"
            self._row("failure", type(exc).__name__)
        self.trace.final_time = self.time
        self.trace.solve_times = {s.value: list(v) for s, v in self.solve_times.items()}
        return self.trace

    def run(self, stop_on_fall: bool = True) -> Trace:
        return self.run_until(self.sc.duration, stop_on_fall)


def run(scenario: Scenario, clock: ClockConfig | None = None, stop_on_fall: bool = True) -> Trace:
    clock = clock or ClockConfig()
    if clock.mode == "wall":
        return run_wall(scenario, clock)
    return Orchestrator(scenario, clock).run(stop_on_fall)


def run_wall(scenario: Scenario, clock: ClockConfig) -> Trace:
    """Threaded real-time run. Workers never block each other: each one
    publishes into its own slot and the plant reads the accepted slot.

    The trace is not deterministic in this mode.
    """
    orch = Orchestrator(scenario, clock)
    lock = threading.Lock()  # guards only the trace rows and the plant snapshot
    stop = threading.Event()
    budget = {}

    def worker(src, order, period):
        missed = total = 0
        next_t = time.perf_counter()
        while not stop.is_set():
            with lock:
                rec = orch._solve(src, order) if not orch._disabled(src) else None
            t_solve = orch.solve_times[src][-1] if rec is not None else 0.0
            total += 1
            missed += t_solve > period
            if rec is not None:
                with lock:
                    orch._publish(rec)
            next_t += period
            delay = next_t - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        budget[src.value] = (total, missed)

    orch.start()
    threads = [threading.Thread(target=worker, args=(src, order, every * clock.plant_period),
                                daemon=True) for src, every, order in orch.workers]
    for th in threads:
        th.start()
    next_t = time.perf_counter()
    n_end = round(scenario.duration / clock.plant_period)
    while orch.tick < n_end and not orch.trace.fallen:
        with lock:
            orch._plant_tick()
        next_t += clock.plant_period
        delay = next_t - time.perf_counter()
        if delay > 0:
            time.sleep(delay)
    stop.set()
    for th in threads:
        th.join(timeout=5.0)
    orch.trace.final_time = orch.time
    orch.trace.solve_times = {s.value: list(v) for s, v in orch.solve_times.items()}
    orch.trace.solve_times["budget"] = budget
    return orch.trace


def stationary_scenario(problem: PlanningProblem | None = None, planner: str = "arto",
                        ref=(0.1, 0.0), half_width: float = 0.15, assist: bool = False,
                        baseline: BaselineConfig | None = None, **kw) -> Scenario:
    """CoM at rest midway between the feet, left foot in support."""
    problem = problem or PlanningProblem()
    baseline = baseline or BaselineConfig(horizon=problem.horizon)
    impulses = list(kw.pop("impulses", ()))
    references = kw.pop("references", ((0.0, ref[0], ref[1]),))
    if assist:
        # toward the stance foot so the first swing can start
        impulses.append(Impulse(baseline.assist_force, math.pi / 2, baseline.assist_duration, 0.0))
    return Scenario(ComState(0.0, 0.0, 0.0, 0.0), FootPosition(0.0, half_width), Side.LEFT,
                    FootPosition(0.0, -half_width), 0.0, planner,
                    references=references, impulses=tuple(impulses),
                    problem=problem, baseline=baseline, **kw)


def advance_to_phase(orch: Orchestrator, side: Side, fraction: float = 0.5,
                     t_max: float | None = None) -> bool:
    """Tick until the plant is ``fraction`` of the way through a step on
    ``side``. Returns False when the plant fell or ``t_max`` passed first."""
    orch.start()
    n_max = None if t_max is None else round(t_max / orch.dt)
    while True:
        p = orch.plant
        acc = orch.exchange.current()
        if p.fallen:
            return False
        if acc is not None and p.stance == side:
            total, _ = acc.record.step_target(p.step_count)
            if p.time_in_step >= fraction * total:
                return True
        if n_max is not None and orch.tick >= n_max:
            return False
        orch._advance()
