"""Linear inverted pendulum propagation.

The CoM moves at constant height, so the sagittal and coronal axes obey the
same scalar ODE ``xdd = omega^2 (x - u)`` and are propagated independently.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K


class InputDomainError(ValueError):
    """Raised for non-finite or out-of-domain numeric inputs."""


@dataclass(frozen=True)
class LipParams:
    g: float = 9.81
    h: float = 0.8
    omega: float = field(init=False)

    def __post_init__(self):
        if not (math.isfinite(self.g) and self.g > 0):
            raise InputDomainError(f"g must be positive, got {self.g}")
        if not (math.isfinite(self.h) and self.h > 0):
            raise InputDomainError(f"h must be positive, got {self.h}")
        object.__setattr__(self, "omega", math.sqrt(self.g / self.h))


@dataclass(frozen=True)
class ComState:
    x: float = 0.0
    y: float = 0.0
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        _check_finite(self.x, self.y, self.vx, self.vy)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy])

    @classmethod
    def from_array(cls, a) -> "ComState":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class FootPosition:
    ux: float = 0.0
    uy: float = 0.0

    def __post_init__(self):
        _check_finite(self.ux, self.uy)

    def as_array(self) -> np.ndarray:
        return np.array([self.ux, self.uy])


class Integrator(enum.Enum):
    EULER = K.EULER
    HEUN = K.HEUN
    RK4 = K.RK4


DEFAULT_SUBSTEPS = 6


def _check_finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise InputDomainError(f"non-finite input: {v!r}")


def closed_form_step(state: ComState, foot: FootPosition, dt: float,
                     params: LipParams) -> ComState:
    """Exact LIP state after ``dt`` seconds on a fixed support foot."""
    _check_finite(dt)
    x, y, vx, vy = K.exact_step(state.x, state.y, state.vx, state.vy,
                                foot.ux, foot.uy, float(dt), params.omega)
    return ComState(x, y, vx, vy)


def closed_form_step_exp(state: ComState, foot: FootPosition, dt: float,
                         params: LipParams) -> ComState:
    """Same map as :func:`closed_form_step` written with the exponential split.

    ``a`` multiplies the divergent mode and ``b`` the convergent one.
    """
    _check_finite(dt)
    w = params.omega
    ep, em = math.exp(w * dt), math.exp(-w * dt)
    out = []
    for pos, vel, u in ((state.x, state.vx, foot.ux), (state.y, state.vy, foot.uy)):
        a = 0.5 * (pos - u + vel / w)
        b = 0.5 * (pos - u - vel / w)
        out.append((a * ep + b * em + u, w * (a * ep - b * em)))
    return ComState(out[0][0], out[1][0], out[0][1], out[1][1])


def integrate_step(state: ComState, foot: FootPosition, dt: float, params: LipParams,
                   method: Integrator | str = Integrator.RK4,
                   substeps: int = DEFAULT_SUBSTEPS) -> ComState:
    """Explicit integration of the LIP over ``dt`` using ``substeps`` equal sub-intervals."""
    method = _as_integrator(method)
    if int(substeps) != substeps or substeps < 1:
        raise InputDomainError(f"substeps must be a positive integer, got {substeps!r}")
    _check_finite(dt)
    if dt < 0:
        raise InputDomainError(f"dt must be non-negative, got {dt}")
    x, y, vx, vy = K.integrate(state.x, state.y, state.vx, state.vy, foot.ux, foot.uy,
                               float(dt), params.omega ** 2, method.value, int(substeps))
    return ComState(x, y, vx, vy)


def _as_integrator(method) -> Integrator:
    if isinstance(method, Integrator):
        return method
    try:
        return Integrator[str(method).upper()]
    except KeyError:
        raise InputDomainError(f"unknown integration method {method!r}") from None


@dataclass(frozen=True)
class ErrorSample:
    t: float
    method: str
    substeps: int
    abs_error: float


def integration_error_table(params: LipParams, initial_offset: float, horizon: float,
                            resolution: float,
                            methods=(Integrator.EULER, Integrator.HEUN, Integrator.RK4),
                            substep_counts=(4, 5, 6, 7)) -> list[ErrorSample]:
    """Absolute CoM position error of each integrator against the exact solution.

    The pendulum starts at rest ``initial_offset`` metres from its foot. Each
    method integrates the whole ``horizon`` with ``substeps`` intervals and is
    sampled every ``resolution`` seconds by evaluating the same scheme from
    t = 0 with the step size ``horizon / substeps`` (the last partial interval
    is integrated with a shortened step).
    """
    _check_finite(initial_offset, horizon, resolution)
    if horizon <= 0:
        raise InputDomainError("horizon must be positive")
    if resolution <= 0:
        raise InputDomainError("resolution must be positive")
    start = ComState(initial_offset, 0.0, 0.0, 0.0)
    foot = FootPosition(0.0, 0.0)
    n_samples = int(math.floor(horizon / resolution + 1e-9))
    times = [k * resolution for k in range(n_samples + 1)]
    rows = []
    for method in methods:
        method = _as_integrator(method)
        for n in substep_counts:
            h = horizon / n
            for t in times:
                full = int(math.floor(t / h + 1e-9))
                s = integrate_step(start, foot, full * h, params, method, full) if full else start
                rest = t - full * h
                if rest > 1e-12:
                    s = integrate_step(s, foot, rest, params, method, 1)
                exact = closed_form_step(start, foot, t, params)
                rows.append(ErrorSample(t, method.name, n, abs(s.x - exact.x)))
    return rows


def error_table_csv(rows: list[ErrorSample]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "method", "substeps", "abs_error"])
    for r in rows:
        w.writerow([f"{r.t:.6f}", r.method, r.substeps, repr(r.abs_error)])
    return buf.getvalue()


def max_error(rows: list[ErrorSample], method: str, substeps: int) -> float:
    return max(r.abs_error for r in rows if r.method == method and r.substeps == substeps)
