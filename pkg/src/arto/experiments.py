"""Trace capture, recovery checks and polar disturbance sweeps."""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lip import InputDomainError
from .orchestrator import (ClockConfig, Orchestrator, Scenario, Trace, advance_to_phase, run)
from .problem import PlanningProblem, Side
from .simulator import Impulse, periodic_in_place_state

STEP_HEADER = ["step", "time_s", "duration", "foot_x", "foot_y", "stance", "com_x", "com_y",
               "com_vx", "com_vy"]
ENVELOPE_HEADER = ["planner", "angle_rad", "max_magnitude", "units"]
SWEEP_PLANNERS = ("arto", "rk4", "baseline")


def run_trace(scenario: Scenario, out_dir, name: str = "trace",
              clock: ClockConfig | None = None) -> Trace:
    """Run a scenario and write ``<name>.csv`` plus ``<name>_steps.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr = run(scenario, clock)
    tr.write_csv(out / f"{name}.csv")
    write_steps(tr, out / f"{name}_steps.csv")
    return tr


def write_steps(trace: Trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_HEADER)
        for ev in trace.steps:
            c = ev.com
            w.writerow([ev.step_count, repr(ev.t), repr(ev.duration), repr(ev.foot[0]),
                        repr(ev.foot[1]), ev.stance.name.lower(), repr(c.x), repr(c.y),
                        repr(c.vx), repr(c.vy)])


def velocity_error(trace: Trace, reference, t_from: float, t_to: float) -> float:
    """RMS velocity tracking error over [t_from, t_to].

    The CoM velocity of a LIP gait swings within every step, so each stride
    is summarised by the mean of the velocities at its two bounding support
    exchanges. Strides ending inside the interval are counted. Returns inf
    when fewer than two exchanges are available.
    """
    ev = [e for e in trace.steps if e.t <= t_to + 1e-9]
    idx = [i for i, e in enumerate(ev) if e.t >= t_from - 1e-9 and i > 0]
    if not idx:
        return math.inf
    errs = []
    for i in idx:
        a, b = ev[i - 1].com, ev[i].com
        ref = reference(ev[i].t)
        ex = 0.5 * (a.vx + b.vx) - ref.vx_ref
        ey = 0.5 * (a.vy + b.vy) - ref.vy_ref
        errs.append(ex * ex + ey * ey)
    return math.sqrt(sum(errs) / len(errs))


def recovery_predicate(trace: Trace, reference, t_disturb: float, window: float = 5.0,
                       threshold: float = 0.05, final: float = 1.0) -> bool:
    """No fall within ``window`` after the disturbance and tracking restored
    over the last ``final`` seconds of it."""
    t_end = t_disturb + window
    if trace.fallen or trace.failure:
        return False
    if trace.final_time < t_end - 1e-9:
        return False
    return velocity_error(trace, reference, t_end - final, t_end) < threshold


def stepping_in_place(problem: PlanningProblem | None = None, planner: str = "arto",
                      half_width: float = 0.15, step_time: float = 0.5, **kw) -> Scenario:
    """Scenario starting on a periodic in-place cycle with zero reference."""
    problem = problem or PlanningProblem()
    com, support, swing = periodic_in_place_state(problem.lip, half_width, step_time, Side.LEFT)
    kw.setdefault("nominal_half_width", half_width)
    return Scenario(com, support, Side.LEFT, swing, 0.0, planner, problem=problem, **kw)


@dataclass(frozen=True)
class SweepSpec:
    kind: str = "push"  # or "velocity"
    planners: tuple = SWEEP_PLANNERS
    n_angles: int = 16
    lower: float = 0.0
    upper: float = 400.0
    resolution: float = 1.0
    trials: int = 1
    window: float = 5.0
    settle: float = 2.0
    phase: float = 0.5
    threshold: float = 0.05
    push_duration: float = 0.1
    half_width: float = 0.15
    step_time: float = 0.5

    def __post_init__(self):
        if self.kind not in ("push", "velocity"):
            raise InputDomainError(f"unknown sweep kind {self.kind!r}")
        if not self.upper > self.lower >= 0:
            raise InputDomainError("sweep bounds must satisfy 0 <= lower < upper")
        if not self.resolution > 0:
            raise InputDomainError("resolution must be positive")
        if self.n_angles < 1 or self.trials < 1:
            raise InputDomainError("n_angles and trials must be positive")

    @property
    def units(self) -> str:
        return "N" if self.kind == "push" else "m/s"

    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_angles) / self.n_angles

    @property
    def n_bisect(self) -> int:
        return math.ceil(math.log2((self.upper - self.lower) / self.resolution))


@dataclass
class EnvelopePoint:
    angle: float
    magnitude: float
    flag: str = ""  # "", "lower_fails", "upper_passes", "non_monotone"
    runs: int = 0


@dataclass
class PolarEnvelope:
    units: str
    points: dict = field(default_factory=dict)  # planner -> list[EnvelopePoint]

    def values(self, planner: str) -> np.ndarray:
        return np.array([p.magnitude for p in self.points[planner]])

    def angles(self, planner: str) -> np.ndarray:
        return np.array([p.angle for p in self.points[planner]])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ENVELOPE_HEADER)
            for planner, pts in self.points.items():
                for p in pts:
                    w.writerow([planner, repr(float(p.angle)), repr(float(p.magnitude)), self.units])

    def write_svg(self, path, title: str = ""):
        path = Path(path)
        path.write_text(polar_svg(self, title))


_COLORS = {"arto": "#d62728", "rk4": "#1f77b4", "baseline": "#2ca02c", "gd": "#9467bd"}


def polar_svg(env: PolarEnvelope, title: str = "", size: int = 420) -> str:
    c = size / 2
    r_px = c - 50
    vmax = max((p.magnitude for pts in env.points.values() for p in pts), default=1.0) or 1.0
    # round the outer ring up to a tidy value
    mag = 10 ** math.floor(math.log10(vmax))
    ring = math.ceil(vmax / mag) * mag
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 40}" '
           f'viewBox="0 0 {size} {size + 40}" font-family="sans-serif" font-size="11">',
           f'<rect width="100%" height="100%" fill="white"/>']
    if title:
        out.append(f'<text x="{c:.1f}" y="16" text-anchor="middle" font-size="13">{title}</text>')
    for k in range(1, 5):
        rr = r_px * k / 4
        out.append(f'<circle cx="{c:.1f}" cy="{c + 10:.1f}" r="{rr:.1f}" fill="none" '
                   f'stroke="#ccc"/>')
        out.append(f'<text x="{c + 3:.1f}" y="{c + 10 - rr - 2:.1f}" fill="#888">'
                   f'{ring * k / 4:g}</text>')
    for a in np.arange(8) * np.pi / 4:
        x, y = c + r_px * math.cos(a), c + 10 - r_px * math.sin(a)
        out.append(f'<line x1="{c:.1f}" y1="{c + 10:.1f}" x2="{x:.1f}" y2="{y:.1f}" stroke="#ddd"/>')
    for i, (planner, pts) in enumerate(env.points.items()):
        coords = []
        for p in pts:
            rr = r_px * p.magnitude / ring
            coords.append(f"{c + rr * math.cos(p.angle):.2f},{c + 10 - rr * math.sin(p.angle):.2f}")
        col = _COLORS.get(planner, "#000")
        out.append(f'<polygon points="{" ".join(coords)}" fill="{col}" fill-opacity="0.12" '
                   f'stroke="{col}" stroke-width="2"/>')
        out.append(f'<rect x="{20 + 110 * i}" y="{size + 18}" width="12" height="12" fill="{col}"/>')
        out.append(f'<text x="{36 + 110 * i}" y="{size + 28}">{planner}</text>')
    out.append(f'<text x="{size - 10}" y="{size + 28}" text-anchor="end" fill="#555">'
               f'{env.units}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _side_for(angle: float) -> Side:
    # disturbances with a +y component hit mid-stance on the left foot; the
    # mirrored directions hit the mirrored phase so the sweep stays symmetric
    return Side.LEFT if math.sin(angle) >= -1e-12 else Side.RIGHT


class Sweeper:
    """Runs single trials from cached snapshots of a settled in-place gait."""

    def __init__(self, spec: SweepSpec, problem: PlanningProblem | None = None,
                 clock: ClockConfig | None = None, **scenario_kw):
        self.spec = spec
        self.problem = problem or PlanningProblem()
        self.clock = clock or ClockConfig()
        self.kw = scenario_kw
        self._snap: dict = {}
        self.log: list = []  # (planner, angle, magnitude, passed)

    def snapshot(self, planner: str, side: Side) -> Orchestrator:
        key = (planner, side)
        if key not in self._snap:
            sp = self.spec
            kw = {**self.kw, "duration": 1e6, "record_every": 0}
            sc = stepping_in_place(self.problem, planner, sp.half_width, sp.step_time, **kw)
            orch = Orchestrator(sc, self.clock)
            orch.run_until(sp.settle)
            if orch.trace.fallen or orch.trace.failure:
                raise RuntimeError(f"{planner} does not hold the in-place gait")
            if not advance_to_phase(orch, side, sp.phase, sp.settle + 5.0):
                raise RuntimeError(f"{planner} never reached the requested push phase")
            self._snap[key] = orch
        return self._snap[key]

    def trial(self, planner: str, angle: float, magnitude: float) -> tuple[bool, Trace]:
        sp = self.spec
        orch = copy.deepcopy(self.snapshot(planner, _side_for(angle)))
        t0 = orch.time
        if magnitude > 0:
            if sp.kind == "push":
                orch.plant.add_impulse(Impulse(magnitude, angle, sp.push_duration, t0))
            else:
                refs = orch.sc.references + ((t0, magnitude * math.cos(angle),
                                              magnitude * math.sin(angle)),)
                orch.sc = replace(orch.sc, references=refs)
        tr = orch.run_until(t0 + sp.window)
        ok = recovery_predicate(tr, orch.sc.reference, t0, sp.window, sp.threshold)
        self.log.append((planner, float(angle), float(magnitude), ok))
        return ok, tr

    def passes(self, planner: str, angle: float, magnitude: float) -> bool:
        return all(self.trial(planner, angle, magnitude)[0] for _ in range(self.spec.trials))

    def bisect(self, planner: str, angle: float) -> EnvelopePoint:
        """Largest grid magnitude that passes, assuming pass/fail is monotone."""
        sp = self.spec
        n = round((sp.upper - sp.lower) / sp.resolution)
        runs = 0

        def mag(k):
            return sp.lower + k * sp.resolution

        def ok(k):
            nonlocal runs
            runs += 1
            return self.passes(planner, angle, mag(k))

        if not ok(0):
            return EnvelopePoint(angle, 0.0, "lower_fails", runs)
        if ok(n):
            return EnvelopePoint(angle, mag(n), "upper_passes", runs)
        lo, hi = 0, n
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                lo = mid
            else:
                hi = mid
        return EnvelopePoint(angle, mag(lo), "", runs)

    def sweep(self, planners=None, angles=None) -> PolarEnvelope:
        planners = planners or self.spec.planners
        angles = self.spec.angles() if angles is None else angles
        env = PolarEnvelope(self.spec.units)
        for planner in planners:
            env.points[planner] = [self.bisect(planner, float(a)) for a in angles]
        return env


def max_push_sweep(spec: SweepSpec | None = None, problem: PlanningProblem | None = None,
                   **kw) -> PolarEnvelope:
    spec = spec or SweepSpec(kind="push")
    if spec.kind != "push":
        spec = replace(spec, kind="push")
    return Sweeper(spec, problem, **kw).sweep()


def max_velocity_sweep(spec: SweepSpec | None = None, problem: PlanningProblem | None = None,
                       **kw) -> PolarEnvelope:
    spec = spec or SweepSpec(kind="velocity", upper=2.0, resolution=0.01)
    if spec.kind != "velocity":
        spec = replace(spec, kind="velocity")
    return Sweeper(spec, problem, **kw).sweep()


def write_envelope(env: PolarEnvelope, out_dir, title: str = ""):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env.write_csv(out / "envelope.csv")
    env.write_svg(out / "envelope.svg", title)
    return out / "envelope.csv", out / "envelope.svg"


def run_scenario(spec, cfg, out_dir=None, name: str = "trace") -> Trace:
    """Run a scenario description under a configuration.

    A phase-aligned push waits until ``push_after`` and then for the requested
    point of a step on ``push_side``. Trace files are written when ``out_dir``
    is given.
    """
    sc = spec.build(cfg)
    orch = Orchestrator(sc, cfg.clock())
    if cfg.clock().mode == "wall":
        from .orchestrator import run_wall
        tr = run_wall(sc, cfg.clock())
    else:
        if spec.push is not None:
            orch.run_until(spec.push_after)
            if not orch.trace.fallen and advance_to_phase(orch, spec.push_side, spec.push_phase,
                                                          sc.duration):
                f, a, d = spec.push
                orch.plant.add_impulse(Impulse(f, a, d, orch.time))
                orch._row("push", "", 0, "", f)
        tr = orch.run_until(sc.duration)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        tr.write_csv(out / f"{name}.csv")
        write_steps(tr, out / f"{name}_steps.csv")
    return tr
