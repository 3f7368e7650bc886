"""Decision variables, tracking cost, hard constraints and soft penalties."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .lip import ComState, FootPosition, InputDomainError, LipParams


class Side(enum.IntEnum):
    LEFT = 1
    RIGHT = -1

    @property
    def other(self) -> "Side":
        return Side(-int(self))


class Source(enum.Enum):
    RK4 = "RK4"
    GRADIENT_DESCENT = "GradientDescent"
    BASELINE = "Baseline"
    NOMINAL = "Nominal"


@dataclass(frozen=True)
class Reference:
    vx_ref: float = 0.0
    vy_ref: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.vx_ref) and math.isfinite(self.vy_ref)):
            raise InputDomainError("reference velocity must be finite")


@dataclass(frozen=True)
class CostWeights:
    wx: float = 10.0
    wy: float = 10.0

    def __post_init__(self):
        if not (self.wx > 0 and self.wy > 0):
            raise InputDomainError("velocity weights must be positive")


@dataclass(frozen=True)
class ConstraintSet:
    l_max: float = 1.0
    r_foot: float = 0.1
    t_lower: float = 0.2
    t_upper: float = 0.8
    w_reach: float = 1.0
    w_crossing: float = 1.0
    w_duration: float = 1.0
    # constraint g <= c is rewritten c + k (g - c) <= c before forming exp(g / c)
    sharpness: float = 1.0
    # the current step may end now, so its lower bound is zero and the
    # penalty needs its own time scale
    current_step_scale: float = 0.01

    def __post_init__(self):
        if not self.l_max > 0:
            raise InputDomainError("l_max must be positive")
        if not self.r_foot >= 0:
            raise InputDomainError("r_foot must be non-negative")
        if not 0 < self.t_lower < self.t_upper:
            raise InputDomainError("need 0 < t_lower < t_upper")
        if not self.sharpness > 0:
            raise InputDomainError("sharpness must be positive")
        if not self.current_step_scale > 0:
            raise InputDomainError("current_step_scale must be positive")

    def weights(self, horizon: int) -> np.ndarray:
        n = horizon
        return np.concatenate([
            np.full(2 * n + 1, self.w_reach),
            np.full(n, self.w_crossing),
            np.full(2 * (n + 1), self.w_duration),
        ])


def constraint_ids(horizon: int) -> list[str]:
    n = horizon
    ids = [f"reach_touchdown({k})" for k in range(1, n + 1)]
    ids += [f"reach_liftoff({k})" for k in range(0, n + 1)]
    ids += [f"crossing({k})" for k in range(1, n + 1)]
    ids += [f"duration_lower({k})" for k in range(0, n + 1)]
    ids += [f"duration_upper({k})" for k in range(0, n + 1)]
    return ids


@dataclass(frozen=True, eq=False)
class FootstepPlan:
    """Future support feet and step durations.

    ``durations[0]`` is the time left in the current step; ``durations[k]``
    for k >= 1 is the full duration of the step taken on ``feet[k - 1]``.
    """

    feet: np.ndarray
    durations: np.ndarray
    stance: Side = Side.LEFT
    source: Source = Source.NOMINAL
    feasible: bool = True

    def __post_init__(self):
        feet = np.array(self.feet, dtype=float).reshape(-1, 2)
        durations = np.array(self.durations, dtype=float).reshape(-1)
        if durations.shape[0] != feet.shape[0] + 1:
            raise InputDomainError("need exactly one more duration than future feet")
        feet.setflags(write=False)
        durations.setflags(write=False)
        object.__setattr__(self, "feet", feet)
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "stance", Side(self.stance))

    @property
    def horizon(self) -> int:
        return self.feet.shape[0]

    @property
    def step_due(self) -> bool:
        return self.durations[0] <= 0.0

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.feet.reshape(-1), self.durations])

    @classmethod
    def from_vector(cls, z, stance, source=Source.NOMINAL, feasible=True) -> "FootstepPlan":
        z = np.asarray(z, dtype=float)
        n = (z.shape[0] - 1) // 3
        return cls(z[: 2 * n].reshape(n, 2), z[2 * n:], stance, source, feasible)

    def with_(self, **changes) -> "FootstepPlan":
        return replace(self, **changes)

    def same_as(self, other: "FootstepPlan") -> bool:
        return (np.array_equal(self.feet, other.feet)
                and np.array_equal(self.durations, other.durations)
                and self.stance == other.stance)


@dataclass(frozen=True)
class PlanningState:
    com: ComState
    current_foot: FootPosition
    stance: Side = Side.LEFT
    time_in_step: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.time_in_step) and self.time_in_step >= 0):
            raise InputDomainError("time_in_step must be finite and non-negative")
        object.__setattr__(self, "stance", Side(self.stance))


@dataclass(frozen=True)
class PlanningProblem:
    """Everything a solver needs besides the state and the warm start."""

    lip: LipParams = field(default_factory=LipParams)
    weights: CostWeights = field(default_factory=CostWeights)
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    horizon: int = 2

    def current_step_bounds(self, state: PlanningState) -> tuple[float, float]:
        """Bounds on the remaining time of the current step.

        The remainder may shrink to zero; the whole current step must not
        exceed ``t_upper``.
        """
        hi = max(self.constraints.t_upper - state.time_in_step, 0.0)
        return 0.0, hi

    def param_vector(self, state: PlanningState, ref: Reference,
                     reach_margin: float = 0.0) -> np.ndarray:
        c = self.constraints
        lo, hi = self.current_step_bounds(state)
        prm = np.empty(K.N_PARAMS)
        prm[K.P_OMEGA] = self.lip.omega
        prm[K.P_VXREF] = ref.vx_ref
        prm[K.P_VYREF] = ref.vy_ref
        prm[K.P_WX] = self.weights.wx
        prm[K.P_WY] = self.weights.wy
        prm[K.P_LMAX] = c.l_max
        prm[K.P_RFOOT] = c.r_foot
        prm[K.P_TLOW] = c.t_lower
        prm[K.P_TUP] = c.t_upper
        prm[K.P_D0LO] = lo
        prm[K.P_D0HI] = hi
        prm[K.P_KAPPA] = c.sharpness
        prm[K.P_MARGIN] = reach_margin
        prm[K.P_D0SCALE] = c.current_step_scale
        return prm


def state_arrays(state: PlanningState):
    return state.com.as_array(), state.current_foot.as_array(), float(int(state.stance))


def _check_plan(plan: FootstepPlan, problem: PlanningProblem):
    if plan.horizon != problem.horizon:
        raise InputDomainError(
            f"plan has {plan.horizon} feet but the problem horizon is {problem.horizon}")


def predicted_states(plan: FootstepPlan, state: PlanningState, problem: PlanningProblem,
                     dynamics: str = "exact", substeps: int = 6) -> np.ndarray:
    """Rows: current state, then the state at the end of every planned step."""
    x0, f0, _ = state_arrays(state)
    out = np.empty((plan.horizon + 2, 4))
    mode = K.EXACT if dynamics == "exact" else K.RK4
    K.rollout(plan.to_vector(), x0, f0, problem.lip.omega, mode, substeps, out)
    return out


def cost(plan: FootstepPlan, state: PlanningState, ref: Reference,
         problem: PlanningProblem, dynamics: str = "exact", substeps: int = 6) -> float:
    """Weighted squared velocity error at every predicted step boundary.

    A rollout that blows up returns ``inf`` rather than raising.
    """
    _check_plan(plan, problem)
    states = predicted_states(plan, state, problem, dynamics, substeps)
    prm = problem.param_vector(state, ref)
    j = K.tracking_cost(states, prm)
    return float(j) if math.isfinite(j) else math.inf


def hard_constraints(plan: FootstepPlan, state: PlanningState, problem: PlanningProblem,
                     dynamics: str = "exact", substeps: int = 6,
                     reach_margin: float = 0.0) -> list[tuple[str, float]]:
    """(id, residual) for every constraint; residual <= 0 means satisfied."""
    r, _ = _residuals(plan, state, problem, Reference(), dynamics, substeps, reach_margin)
    return list(zip(constraint_ids(plan.horizon), (float(v) for v in r)))


def _residuals(plan, state, problem, ref, dynamics="exact", substeps=6, reach_margin=0.0):
    _check_plan(plan, problem)
    states = predicted_states(plan, state, problem, dynamics, substeps)
    _, f0, stance = state_arrays(state)
    m = K.n_constraints(plan.horizon)
    r = np.empty(m)
    c = np.empty(m)
    K.constraints(plan.to_vector(), states, np.zeros((1, 1, 1)), f0, stance,
                  problem.param_vector(state, ref, reach_margin), False, r, c, np.zeros((1, 1)))
    return r, c


def max_residual(plan: FootstepPlan, state: PlanningState, problem: PlanningProblem,
                 dynamics: str = "exact", substeps: int = 6) -> float:
    r, _ = _residuals(plan, state, problem, Reference(), dynamics, substeps)
    return float(np.max(r))


def is_feasible(plan: FootstepPlan, state: PlanningState, problem: PlanningProblem,
                tol: float = 1e-6) -> bool:
    r, _ = _residuals(plan, state, problem, Reference())
    return bool(np.all(np.isfinite(r)) and np.max(r) <= tol)


def penalty_terms(plan: FootstepPlan, state: PlanningState, problem: PlanningProblem) -> np.ndarray:
    """Individual penalties ``w_i exp(1 + k r_i / c_i)``; inf where they overflow."""
    r, c = _residuals(plan, state, problem, Reference())
    a = 1.0 + problem.constraints.sharpness * r / c
    w = problem.constraints.weights(plan.horizon)
    with np.errstate(over="ignore"):
        return np.where(a > K.EXP_CAP, math.inf, w * np.exp(np.minimum(a, K.EXP_CAP)))


def soft_cost(plan: FootstepPlan, state: PlanningState, ref: Reference,
              problem: PlanningProblem) -> tuple[float, bool]:
    """Penalised cost on the closed-form rollout and a gradient-usable flag.

    On exponent overflow the value saturates to a large finite sentinel and
    the flag is False.
    """
    _check_plan(plan, problem)
    x0, f0, stance = state_arrays(state)
    n = plan.horizon
    m = K.n_constraints(n)
    jp, _, ok = K.soft_cost(plan.to_vector(), x0, f0, stance, problem.param_vector(state, ref),
                            problem.constraints.weights(n), np.empty((n + 2, 4)),
                            np.empty(m), np.empty(m))
    return float(jp), bool(ok)


def nominal_plan(state: PlanningState, problem: PlanningProblem, half_width: float = 0.15,
                 step_time: float | None = None) -> FootstepPlan:
    """Stepping-in-place plan alternating feet about the current CoM."""
    c = problem.constraints
    t = step_time if step_time is not None else 0.5 * (c.t_lower + c.t_upper)
    lo, hi = problem.current_step_bounds(state)
    d0 = min(max(t - state.time_in_step, lo), hi)
    feet = []
    side = state.stance
    for _ in range(problem.horizon):
        side = side.other
        feet.append((state.com.x, state.com.y + int(side) * half_width))
    return FootstepPlan(np.array(feet), np.array([d0] + [t] * problem.horizon), state.stance,
                        Source.NOMINAL, True)
