"""Ground-truth LIP plant with support exchange, pushes and swing trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .lip import ComState, FootPosition, InputDomainError, LipParams
from .problem import ConstraintSet, Side


@dataclass(frozen=True)
class Impulse:
    force: float
    angle: float = math.pi / 2
    duration: float = 0.1
    start: float = 0.0
    mass: float = 15.0

    def __post_init__(self):
        if not self.duration > 0:
            raise InputDomainError("impulse duration must be positive")
        if not self.mass > 0:
            raise InputDomainError("mass must be positive")

    @property
    def delta_v(self) -> tuple[float, float]:
        dv = self.force * self.duration / self.mass
        return dv * math.cos(self.angle), dv * math.sin(self.angle)

    def velocity_kick(self, t0: float, t1: float) -> tuple[float, float]:
        """Velocity change contributed over the interval [t0, t1)."""
        overlap = min(t1, self.start + self.duration) - max(t0, self.start)
        if overlap <= 0:
            return 0.0, 0.0
        a = self.force / self.mass * overlap
        return a * math.cos(self.angle), a * math.sin(self.angle)


@dataclass(frozen=True)
class QuinticSegment:
    """Degree-5 polynomial in local time ``s = t - t0`` on [t0, t1].

    ``coeffs[i]`` multiplies ``s**i``; trailing dimensions hold axes.
    """

    coeffs: np.ndarray
    t0: float
    t1: float

    def evaluate(self, t):
        s = np.clip(t - self.t0, 0.0, self.t1 - self.t0)
        c = self.coeffs
        pos = c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))))
        vel = c[1] + s * (2 * c[2] + s * (3 * c[3] + s * (4 * c[4] + s * 5 * c[5])))
        acc = 2 * c[2] + s * (6 * c[3] + s * (12 * c[4] + s * 20 * c[5]))
        return pos, vel, acc


def quintic(b0, b1, T: float, t0: float = 0.0) -> QuinticSegment:
    """Unique quintic joining (pos, vel, acc) ``b0`` at t0 to ``b1`` at t0 + T."""
    if not T > 0:
        raise InputDomainError(f"segment duration must be positive, got {T}")
    p0, v0, a0 = (np.asarray(v, dtype=float) for v in b0)
    p1, v1, a1 = (np.asarray(v, dtype=float) for v in b1)
    dp = p1 - p0
    c3 = (20 * dp - (8 * v1 + 12 * v0) * T - (3 * a0 - a1) * T ** 2) / (2 * T ** 3)
    c4 = (-30 * dp + (14 * v1 + 16 * v0) * T + (3 * a0 - 2 * a1) * T ** 2) / (2 * T ** 4)
    c5 = (12 * dp - 6 * (v1 + v0) * T - (a0 - a1) * T ** 2) / (2 * T ** 5)
    coeffs = np.stack(np.broadcast_arrays(p0, v0, a0 / 2, c3, c4, c5))
    return QuinticSegment(coeffs, t0, t0 + T)


class SwingTrajectory:
    """Swing-foot path: quintic in x/y, and two quintic halves in z that peak
    at ``height`` with zero velocity and acceleration."""

    def __init__(self, start_xy, target_xy, t0: float, t_end: float, height: float = 0.05):
        self.height = height
        self.t_start = t0
        self.target = np.array(target_xy, dtype=float)
        self.t_end = t_end
        zero = np.zeros(2)
        T = max(t_end - t0, 1e-6)
        self.xy = quintic((np.array(start_xy, dtype=float), zero, zero), (self.target, zero, zero), T, t0)
        mid = t0 + 0.5 * T
        self.z = [quintic((0.0, 0.0, 0.0), (height, 0.0, 0.0), mid - t0, t0),
                  quintic((height, 0.0, 0.0), (0.0, 0.0, 0.0), t0 + T - mid, mid)]

    def retarget(self, t: float, target_xy, t_end: float):
        tx, ty = float(target_xy[0]), float(target_xy[1])
        if (abs(tx - self.target[0]) < 1e-9 and abs(ty - self.target[1]) < 1e-9
                and abs(t_end - self.t_end) < 1e-9):
            return
        target = np.array([tx, ty])
        rest = t_end - t
        if rest <= 1e-6:
            return
        p, v, a = self.xy.evaluate(t)
        zero = np.zeros(2)
        self.xy = quintic((p, v, a), (target, zero, zero), rest, t)
        self.target = target.copy()
        self.t_end = t_end
        zp, zv, za = self._z_state(t)
        mid = 0.5 * (self.t_start + t_end)
        if t < mid - 1e-6:
            self.z = [quintic((zp, zv, za), (self.height, 0.0, 0.0), mid - t, t),
                      quintic((self.height, 0.0, 0.0), (0.0, 0.0, 0.0), t_end - mid, mid)]
        else:
            seg = quintic((zp, zv, za), (0.0, 0.0, 0.0), rest, t)
            self.z = [seg, seg]

    def _z_state(self, t):
        seg = self.z[0] if t < self.z[0].t1 else self.z[1]
        return tuple(float(v) for v in seg.evaluate(t))

    def position(self, t: float) -> np.ndarray:
        p, _, _ = self.xy.evaluate(t)
        z = self._z_state(t)[0]
        return np.array([p[0], p[1], max(z, 0.0)])


@dataclass(frozen=True)
class PlantState:
    com: ComState
    support: FootPosition
    stance: Side
    swing: tuple[float, float, float]
    time_in_step: float
    t: float
    step_count: int
    fallen: bool
    fall_reason: str = ""


@dataclass(frozen=True)
class FallLimits:
    l_max: float = 1.0
    max_speed: float = 3.0
    max_degraded: float = 0.5


def detect_fall(com: ComState, support: FootPosition, limits: FallLimits | ConstraintSet,
                degraded_time: float = 0.0) -> tuple[bool, str]:
    """Return (fallen, reason) for the first violated fall condition."""
    if isinstance(limits, ConstraintSet):
        limits = FallLimits(l_max=limits.l_max)
    dist = math.hypot(com.x - support.ux, com.y - support.uy)
    if not math.isfinite(dist) or dist > limits.l_max:
        return True, "leg_extension"
    if math.hypot(com.vx, com.vy) > limits.max_speed:
        return True, "com_speed"
    if degraded_time > limits.max_degraded:
        return True, "degraded"
    return False, ""


@dataclass
class StepEvent:
    t: float
    step_count: int
    foot: tuple[float, float]
    stance: Side
    com: ComState
    duration: float


class Plant:
    """Mutable single-threaded plant driven at a fixed tick."""

    def __init__(self, params: LipParams, com: ComState, support: FootPosition,
                 stance: Side = Side.LEFT, limits: FallLimits | None = None,
                 swing_foot: FootPosition | None = None, swing_height: float = 0.05,
                 track_swing: bool = True, time_in_step: float = 0.0):
        self.params = params
        self.omega = params.omega
        self.x, self.y, self.vx, self.vy = com.x, com.y, com.vx, com.vy
        self.ux, self.uy = support.ux, support.uy
        self.stance = Side(stance)
        self.limits = limits or FallLimits()
        self.time_in_step = time_in_step
        self.t = 0.0
        self.step_count = 0
        self.fallen = False
        self.fall_reason = ""
        self.impulses: list[Impulse] = []
        self.track_swing = track_swing
        self.swing_height = swing_height
        other = swing_foot or FootPosition(support.ux, support.uy - int(self.stance) * 0.3)
        self._swing_xy = (other.ux, other.uy)
        self.swing: SwingTrajectory | None = None
        self.last_step_time = -time_in_step

    @property
    def com(self) -> ComState:
        return ComState(self.x, self.y, self.vx, self.vy)

    @property
    def support(self) -> FootPosition:
        return FootPosition(self.ux, self.uy)

    def add_impulse(self, impulse: Impulse):
        self.impulses.append(impulse)

    def swing_position(self) -> tuple[float, float, float]:
        if self.swing is None:
            return (self._swing_xy[0], self._swing_xy[1], 0.0)
        p = self.swing.position(self.t)
        return (float(p[0]), float(p[1]), float(p[2]))

    def snapshot(self) -> PlantState:
        return PlantState(self.com, self.support, self.stance, self.swing_position(),
                          self.time_in_step, self.t, self.step_count, self.fallen, self.fall_reason)

    def tick(self, dt: float, step_total: float | None = None, next_foot=None,
             swing_target=None, degraded_time: float = 0.0) -> StepEvent | None:
        """Advance one tick.

        ``step_total`` is the planned full duration of the current step and
        ``next_foot`` where the swing foot lands; without them the plant stays
        on its current foot. Returns the step event when support exchanged.
        """
        if self.fallen:
            return None
        t0 = self.t
        t1 = t0 + dt
        for imp in self.impulses:
            dvx, dvy = imp.velocity_kick(t0, t1)
            self.vx += dvx
            self.vy += dvy
        self.x, self.y, self.vx, self.vy = K.exact_step(self.x, self.y, self.vx, self.vy,
                                                        self.ux, self.uy, dt, self.omega)
        self.t = t1
        self.time_in_step += dt
        event = None
        if step_total is not None and next_foot is not None:
            if self.track_swing:
                self._update_swing(next_foot, t1 - self.time_in_step + step_total)
            if self.time_in_step >= step_total - 1e-9:
                event = self._exchange(next_foot)
        self.fallen, self.fall_reason = detect_fall(self.com, self.support, self.limits,
                                                    degraded_time)
        return event

    def _update_swing(self, target, t_land):
        if self.swing is None:
            self.swing = SwingTrajectory(self._swing_xy, target, self.t - self.time_in_step,
                                         max(t_land, self.t + 1e-3), self.swing_height)
        else:
            self.swing.retarget(self.t, target, max(t_land, self.t + 1e-3))

    def _exchange(self, foot) -> StepEvent:
        duration = self.time_in_step
        self._swing_xy = (self.ux, self.uy)
        self.ux, self.uy = float(foot[0]), float(foot[1])
        self.stance = self.stance.other
        self.time_in_step = 0.0
        self.step_count += 1
        self.swing = None
        self.last_step_time = self.t
        return StepEvent(self.t, self.step_count, (self.ux, self.uy), self.stance, self.com,
                         duration)


def periodic_in_place_state(params: LipParams, half_width: float, step_time: float,
                            stance: Side = Side.LEFT, center=(0.0, 0.0)):
    """CoM state at the start of a symmetric stepping-in-place cycle.

    The CoM sits midway between the feet moving toward the new support foot
    with the speed that brings it back to the midpoint after ``step_time``.
    Returns (com, support foot, swing foot).
    """
    w = params.omega
    v = w * half_width * math.tanh(0.5 * w * step_time)
    s = int(stance)
    com = ComState(center[0], center[1], 0.0, s * v)
    support = FootPosition(center[0], center[1] + s * half_width)
    swing = FootPosition(center[0], center[1] - s * half_width)
    return com, support, swing
