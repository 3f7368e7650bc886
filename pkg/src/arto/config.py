"""Plain-text ``key = value`` configuration and scenario files.

Every numeric default lives in the KEYS table below; ``data/default.cfg``
is the annotated copy shipped with the package.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

from .baseline import BaselineConfig
from .gd_optimizer import DescentSettings
from .lip import LipParams
from .orchestrator import PLANNERS, ClockConfig, Scenario, stationary_scenario
from .problem import ConstraintSet, CostWeights, PlanningProblem, Side
from .simulator import FallLimits, Impulse, periodic_in_place_state

ENV_CONFIG_DIR = "ARTO_CONFIG_DIR"
DATA_DIR = Path(__file__).parent / "data"


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _words(s: str) -> tuple:
    return tuple(w for w in s.replace(",", " ").split() if w)


# key: (default, parser, help)
KEYS = {
    "lip.g": (9.81, float, "gravity (m/s^2)"),
    "lip.h": (0.8, float, "CoM height (m)"),
    "cost.wx": (10.0, float, "weight on forward velocity error"),
    "cost.wy": (10.0, float, "weight on lateral velocity error"),
    "horizon": (2, int, "number of future footsteps planned"),
    "constraints.l_max": (1.0, float, "maximum leg extension (m)"),
    "constraints.r_foot": (0.1, float, "minimum lateral foot separation (m)"),
    "constraints.t_lower": (0.2, float, "shortest future step (s)"),
    "constraints.t_upper": (0.8, float, "longest step (s)"),
    "constraints.w_reach": (1.0, float, "penalty weight of the leg-extension rows"),
    "constraints.w_crossing": (1.0, float, "penalty weight of the foot-crossing rows"),
    "constraints.w_duration": (1.0, float, "penalty weight of the duration rows"),
    "constraints.sharpness": (1.0, float, "slope multiplier inside the exponential penalty"),
    "constraints.current_step_scale": (0.01, float, "penalty time scale (s) for the current step's zero lower bound"),
    "gd.max_steps": (100, int, "descent iterations per gd call"),
    "gd.alpha0": (0.01, float, "initial line-search step"),
    "gd.shrink": (0.5, float, "line-search backtracking factor"),
    "gd.armijo": (1e-4, float, "Armijo sufficient-decrease constant"),
    "gd.grad_tol": (1e-6, float, "stop when the gradient norm falls below this"),
    "gd.grad_reject": (1e3, float, "gradient components above this invalidate the solve"),
    "rk4.substeps": (6, int, "RK4 substeps per footstep"),
    "rk4.max_iter": (200, int, "SQP iteration cap"),
    "rk4.reach_margin": (2e-3, float, "extra leg-extension margin (m) covering RK4 model error"),
    "baseline.fixed_dt": (0.5, float, "fixed step duration of the location-only planner (s)"),
    "baseline.box_half_width": (None, _opt_float, "reach box half width (m); none = l_max/sqrt(2)"),
    "baseline.assist_force": (40.0, float, "stationary-start assist force (N)"),
    "baseline.assist_duration": (0.1, float, "stationary-start assist duration (s)"),
    "clock.mode": ("virtual", str, "virtual (deterministic) or wall (threaded real time)"),
    "clock.plant_period": (0.001, float, "plant tick (s)"),
    "clock.gd_period": (0.004, float, "gradient-descent worker period (s)"),
    "clock.rk4_period": (0.04, float, "RK4 worker period (s)"),
    "clock.baseline_period": (0.002, float, "baseline worker period (s)"),
    "plant.max_speed": (3.0, float, "CoM speed above which the robot counts as fallen (m/s)"),
    "plant.max_degraded": (0.5, float, "longest tolerated degraded interval (s)"),
    "plant.swing_height": (0.05, float, "swing foot apex height (m)"),
    "plant.stale_after": (0.1, float, "time without a fresh feasible plan that counts as degraded (s)"),
    "plant.record_every": (10, int, "trace a state row every this many plant ticks (0 = never)"),
    "gait.half_width": (0.15, float, "half stance width when stepping in place (m)"),
    "gait.step_time": (0.5, float, "step time of the initial in-place cycle (s)"),
    "sweep.planners": (("arto", "rk4", "baseline"), _words, "planners compared in sweeps"),
    "sweep.n_angles": (16, int, "directions over the full circle"),
    "sweep.push_upper": (600.0, float, "push search upper bound (N)"),
    "sweep.push_resolution": (1.0, float, "push bisection resolution (N)"),
    "sweep.vel_upper": (3.0, float, "velocity-change search upper bound (m/s); the fall speed limit"),
    "sweep.vel_resolution": (0.01, float, "velocity bisection resolution (m/s)"),
    "sweep.trials": (1, int, "runs per sweep point; all must pass"),
    "sweep.window": (5.0, float, "observation window after the disturbance (s)"),
    "sweep.settle": (2.0, float, "in-place stepping before the disturbance (s)"),
    "sweep.phase": (0.5, float, "fraction of the step at which the disturbance starts"),
    "sweep.threshold": (0.05, float, "velocity RMS error that counts as recovered (m/s)"),
    "sweep.push_duration": (0.1, float, "push duration (s)"),
    "seed": (0, int, "seed for the randomised self-checks"),
}


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return " ".join(v)
    return str(v)


def help_text() -> str:
    width = max(map(len, KEYS))
    lines = ["configuration keys (file: key = value; flag: --key value):"]
    for k, (d, _, h) in KEYS.items():
        lines.append(f"  {k:<{width}}  {h} [default {_format(d)}]")
    return "\n".join(lines)


def parse_lines(text: str, source: str = "<string>") -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ConfigError(f"{source}:{n}: empty key")
        out.setdefault(k, [])
        out[k].append(v)
    return out


class Config:
    """Resolved configuration values keyed like KEYS."""

    def __init__(self, values: dict | None = None):
        self.values = {k: d for k, (d, _, _) in KEYS.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value):
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            try:
                value = KEYS[key][1](value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from None
        self.values[key] = value

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def load(cls, path=None) -> "Config":
        cfg = cls()
        if path is None:
            return cfg
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for k, vs in parse_lines(path.read_text(), str(path)).items():
            cfg.set(k, vs[-1])
        return cfg

    # -- object builders --------------------------------------------------------

    def problem(self) -> PlanningProblem:
        v = self.values
        cs = ConstraintSet(v["constraints.l_max"], v["constraints.r_foot"],
                           v["constraints.t_lower"], v["constraints.t_upper"],
                           v["constraints.w_reach"], v["constraints.w_crossing"],
                           v["constraints.w_duration"], v["constraints.sharpness"],
                           v["constraints.current_step_scale"])
        return PlanningProblem(LipParams(v["lip.g"], v["lip.h"]),
                               CostWeights(v["cost.wx"], v["cost.wy"]), cs, v["horizon"])

    def descent(self) -> DescentSettings:
        v = self.values
        return DescentSettings(v["gd.max_steps"], v["gd.alpha0"], v["gd.shrink"], v["gd.armijo"],
                               v["gd.grad_tol"], grad_reject=v["gd.grad_reject"])

    def baseline(self) -> BaselineConfig:
        v = self.values
        return BaselineConfig(v["baseline.fixed_dt"], v["horizon"], v["baseline.box_half_width"],
                              v["baseline.assist_force"], v["baseline.assist_duration"],
                              v["clock.baseline_period"])

    def clock(self) -> ClockConfig:
        v = self.values
        return ClockConfig(v["clock.mode"], v["clock.plant_period"], v["clock.gd_period"],
                           v["clock.rk4_period"], v["clock.baseline_period"])

    def limits(self) -> FallLimits:
        v = self.values
        return FallLimits(v["constraints.l_max"], v["plant.max_speed"], v["plant.max_degraded"])

    def scenario_kw(self) -> dict:
        v = self.values
        return dict(baseline=self.baseline(), descent=self.descent(),
                    rk4_substeps=v["rk4.substeps"], rk4_max_iter=v["rk4.max_iter"],
                    reach_margin=v["rk4.reach_margin"], limits=self.limits(),
                    swing_height=v["plant.swing_height"], stale_after=v["plant.stale_after"],
                    record_every=v["plant.record_every"],
                    nominal_half_width=v["gait.half_width"])


def default_config_path() -> Path | None:
    """``$ARTO_CONFIG_DIR/default.cfg`` if set and present, else the packaged file."""
    d = os.environ.get(ENV_CONFIG_DIR)
    if d:
        p = Path(d) / "default.cfg"
        if p.is_file():
            return p
    p = DATA_DIR / "default.cfg"
    return p if p.is_file() else None


# -- scenarios ---------------------------------------------------------------------

SCENARIO_KEYS = {
    "start": "stationary (CoM at rest between the feet) or in_place (periodic stepping)",
    "planner": "one of " + ", ".join(PLANNERS),
    "duration": "simulated time (s)",
    "ref": "reference schedule, comma separated time:vx:vy entries",
    "assist": "true adds the baseline assist push at t = 0",
    "impulse": "force:angle:duration:start, may repeat",
    "push": "force:angle:duration applied at the phase given by push_side/push_phase",
    "push_after": "earliest time for the phase-aligned push (s)",
    "push_side": "left or right stance foot at the push",
    "push_phase": "fraction of that step elapsed at the push",
    "must_pass": "true makes a fall an experiment failure",
}


@dataclass(frozen=True)
class ScenarioSpec:
    start: str = "stationary"
    planner: str = "arto"
    duration: float = 10.0
    references: tuple = ((0.0, 0.0, 0.0),)
    assist: bool = False
    impulses: tuple = ()
    push: tuple | None = None  # (force, angle, duration)
    push_after: float = 2.0
    push_side: Side = Side.LEFT
    push_phase: float = 0.5
    must_pass: bool = False

    def build(self, cfg: Config) -> Scenario:
        problem = cfg.problem()
        kw = cfg.scenario_kw()
        if self.start == "stationary":
            return stationary_scenario(problem, self.planner, ref=self.references[0][1:],
                                       half_width=cfg["gait.half_width"], assist=self.assist,
                                       impulses=self.impulses, duration=self.duration,
                                       references=self.references, **kw)
        com, sup, sw = periodic_in_place_state(problem.lip, cfg["gait.half_width"],
                                               cfg["gait.step_time"], Side.LEFT)
        imps = list(self.impulses)
        if self.assist:
            b = kw["baseline"]
            imps.append(Impulse(b.assist_force, math.pi / 2, b.assist_duration, 0.0))
        return Scenario(com, sup, Side.LEFT, sw, 0.0, self.planner, self.duration,
                        references=self.references, impulses=tuple(imps), problem=problem, **kw)


def _floats(s: str, n: int, key: str) -> tuple:
    parts = s.split(":")
    if len(parts) != n:
        raise ConfigError(f"{key}: expected {n} ':'-separated numbers, got {s!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{key}: not numeric: {s!r}") from None


def load_scenario(path) -> ScenarioSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    raw = parse_lines(path.read_text(), str(path))
    unknown = set(raw) - set(SCENARIO_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown scenario keys {sorted(unknown)}")
    kw = {}
    one = {k: vs[-1] for k, vs in raw.items()}
    try:
        if "start" in one:
            if one["start"] not in ("stationary", "in_place"):
                raise ConfigError(f"start must be stationary or in_place, got {one['start']!r}")
            kw["start"] = one["start"]
        if "planner" in one:
            if one["planner"] not in PLANNERS:
                raise ConfigError(f"unknown planner {one['planner']!r}")
            kw["planner"] = one["planner"]
        for k in ("duration", "push_after", "push_phase"):
            if k in one:
                kw[k] = float(one[k])
        for k in ("assist", "must_pass"):
            if k in one:
                kw[k] = _bool(one[k])
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if "ref" in one:
        refs = [_floats(e.strip(), 3, "ref") for e in one["ref"].split(",") if e.strip()]
        kw["references"] = tuple(sorted(refs))
    if "impulse" in raw:
        kw["impulses"] = tuple(Impulse(f, a, d, s) for f, a, d, s in
                               (_floats(v, 4, "impulse") for v in raw["impulse"]))
    if "push" in one:
        kw["push"] = _floats(one["push"], 3, "push")
    if "push_side" in one:
        side = one["push_side"].lower()
        if side not in ("left", "right"):
            raise ConfigError("push_side must be left or right")
        kw["push_side"] = Side.LEFT if side == "left" else Side.RIGHT
    return ScenarioSpec(**kw)
