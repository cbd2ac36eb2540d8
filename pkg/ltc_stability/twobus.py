#  Copyright (c) 2024 ltc-stability developers

"""Closed-form analysis of a generator feeding one LTC-controlled load over a lossy line.

Load admittance is Y_L = G_L + jB_L and the line impedance Z = R + jX. The secondary voltage
|V_2(r)| = |r E / (Z Y_L + r^2)| equals V_0 exactly when a r^4 + b r^2 + c = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Union

import numpy as np

from ltc_stability.common import (
    R_MIN,
    NetworkError,
    NoFeasiblePoint,
    NonPositiveParameter,
    NonPositiveTap,
    SingularSystem,
    UnboundedFamily,
)
from ltc_stability.dynamics import Trajectory, rk4_integrate

DENOMINATOR_MIN = 1e-12
BISECTION_TOL = 1e-12
BRACKET_LIMIT = 1e6
SETTLED_RATE = 1e-6
SETTLED_DISTANCE = 1e-4


@dataclass(frozen=True)
class TwoBusParams:
    E: float
    R: float
    X: float
    G_L: float
    B_L: float
    V_0: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        for name in ("E", "V_0", "T"):
            if not getattr(self, name) > 0:
                raise NonPositiveParameter(name, None, getattr(self, name))
        if self.R == 0 and self.X == 0:
            raise NetworkError("Line impedance R + jX can not be zero!")


@dataclass(frozen=True)
class QuarticCoeffs:
    a: float
    b: float
    c: float
    delta: float


@dataclass(frozen=True)
class FeasiblePair:
    """Both equilibria; r_plus is stable and every r0 > r_minus is attracted to it."""

    r_minus: float
    r_plus: float


@dataclass(frozen=True)
class TwoBusInfeasible:
    coefficients: QuarticCoeffs

    @property
    def reason(self) -> str:
        return "negative discriminant" if self.coefficients.delta < 0 else "positive linear coefficient"


@dataclass(frozen=True)
class SusceptanceFamily:
    """Parameters along the ray B_L = sign * s, G_L = kappa * s for sweep values s >= start.

    sign=+1 follows the capacitive convention of the two-bus model, sign=-1 describes an inductive
    load with b_s = s, the convention of the network model.
    """

    E: float
    R: float
    X: float
    V_0: float = 1.0
    kappa: float = 0.0
    sign: int = 1
    start: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        assert self.sign in (1, -1), "Family sign has to be +1 or -1!"
        assert self.start >= 0, "Family sweep has to start at a non-negative value!"

    def params(self, s: float) -> TwoBusParams:
        return TwoBusParams(E=self.E, R=self.R, X=self.X, G_L=self.kappa * s, B_L=self.sign * s, V_0=self.V_0, T=self.T)


@dataclass(frozen=True)
class TwoBusEvent:
    """Multiplicative change of the line reactance and/or the load admittance at `time`."""

    time: float
    x_factor: float = 1.0
    load_factor: float = 1.0


def quartic_coefficients(p: TwoBusParams) -> QuarticCoeffs:
    a = p.V_0**2
    b = 2 * p.V_0**2 * (p.R * p.G_L - p.X * p.B_L) - p.E**2
    c = p.V_0**2 * (p.G_L**2 + p.B_L**2) * (p.R**2 + p.X**2)
    return QuarticCoeffs(a=a, b=b, c=c, delta=b**2 - 4 * a * c)


def _feasible(q: QuarticCoeffs) -> bool:
    return q.delta >= 0 and q.b <= 0


def tap_equilibria(p: TwoBusParams) -> Union[FeasiblePair, TwoBusInfeasible]:
    q = quartic_coefficients(p)
    if not _feasible(q):
        return TwoBusInfeasible(coefficients=q)
    root = math.sqrt(q.delta)
    # max(0, .) guards -0.0 from roundoff when c = 0
    r_minus = math.sqrt(max(0.0, (-q.b - root) / (2 * q.a)))
    r_plus = math.sqrt(max(0.0, (-q.b + root) / (2 * q.a)))
    return FeasiblePair(r_minus=r_minus, r_plus=r_plus)


def secondary_voltage(p: TwoBusParams, r: float) -> float:
    if not r > 0:
        raise NonPositiveTap(f"Tap ratio has to be positive, got {r!r}")
    denominator = complex(p.R, p.X) * complex(p.G_L, p.B_L) + r**2
    if abs(denominator) < DENOMINATOR_MIN:
        raise SingularSystem(abs(denominator))
    return abs(r * p.E / denominator)


def critical_susceptance(family: SusceptanceFamily, tol: float = BISECTION_TOL) -> float:
    """Signed B_L at the end of the feasible part of the family, located by bisection.

    Raises NoFeasiblePoint when the sweep start is already infeasible and UnboundedFamily when
    the family stays feasible up to BRACKET_LIMIT.
    """

    def feasible(s: float) -> bool:
        return _feasible(quartic_coefficients(family.params(s)))

    low = family.start
    if not feasible(low):
        raise NoFeasiblePoint(f"Family is infeasible already at its start s={low:g}")

    width = 1.0
    while feasible(low + width):
        if low + width > BRACKET_LIMIT:
            raise UnboundedFamily(f"Family stays feasible beyond s={BRACKET_LIMIT:g}")
        low, width = low + width, 2 * width
    high = low + width

    while high - low > tol:
        middle = 0.5 * (low + high)
        if feasible(middle):
            low = middle
        else:
            high = middle
    return family.sign * low


def bl_r_curve(family: SusceptanceFamily, n_samples: int = 50) -> list[tuple[float, float, float]]:
    """Rows (B_L, r_minus, r_plus) from the sweep start up to the critical susceptance.

    The last row sits at the double root r = sqrt(-b / 2a), where both branches meet.
    """
    assert n_samples >= 2, "Curve needs at least two samples!"
    critical = critical_susceptance(family) * family.sign
    rows = []
    for s in np.linspace(family.start, critical, n_samples)[:-1]:
        pair = tap_equilibria(family.params(float(s)))
        assert isinstance(pair, FeasiblePair), f"Sample s={s} inside the feasible range is infeasible!"
        rows.append((family.sign * float(s), pair.r_minus, pair.r_plus))

    q = quartic_coefficients(family.params(critical))
    r_double = math.sqrt(-q.b / (2 * q.a))
    rows.append((family.sign * critical, r_double, r_double))
    return rows


def scale_params(p: TwoBusParams, x_factor: float = 1.0, load_factor: float = 1.0) -> TwoBusParams:
    return replace(p, X=p.X * x_factor, G_L=p.G_L * load_factor, B_L=p.B_L * load_factor)


def _twobus_rhs(p: TwoBusParams):
    def evaluate(r: np.ndarray):
        V_2 = secondary_voltage(p, float(r[0]))
        return np.array([(V_2 - p.V_0) / p.T]), np.array([r[0] * V_2]), np.array([V_2])

    return evaluate


def simulate_twobus(
    p: TwoBusParams,
    r0: float,
    horizon: float = 50.0,
    events: Iterable[TwoBusEvent] = (),
    dt: float | None = None,
    r_min: float = R_MIN,
) -> Trajectory:
    """RK4 trajectory of T dr/dt = |V_2(r)| - V_0 over the whole horizon.

    Events change the parameters exactly at their time. The verdict is Converged when the final
    rate is below 1e-6 and r is within 1e-4 of the stable equilibrium of the parameters in force,
    Collapsed when r reaches `r_min` and Undecided otherwise.
    """
    if not r0 > 0:
        raise NonPositiveTap(f"Initial tap ratio has to be positive, got {r0!r}")
    dt = dt if dt is not None else p.T / 100

    phases = [(0.0, p)]
    for event in sorted(events, key=lambda x: x.time):
        current = scale_params(phases[-1][1], event.x_factor, event.load_factor)
        if event.time <= phases[-1][0]:
            phases[-1] = (phases[-1][0], current)
        else:
            phases.append((event.time, current))

    final = tap_equilibria(phases[-1][1])

    def settled(r: np.ndarray, r_dot: np.ndarray) -> bool:
        if not isinstance(final, FeasiblePair):
            return False
        return abs(r_dot[0]) <= SETTLED_RATE and abs(r[0] - final.r_plus) <= SETTLED_DISTANCE

    return rk4_integrate(
        [(start, _twobus_rhs(params)) for start, params in phases],
        [r0],
        horizon=horizon,
        dt=dt,
        settled=settled,
        r_min=r_min,
        stop_when_settled=False,
    )


def twobus_rows(trajectory: Trajectory) -> tuple[list[str], list[list[float]]]:
    """CSV header and rows (t, r, V1, V2); V1 is the network side of the transformer, r * V2."""
    rows = [[t, r[0], v1[0], v2[0]] for t, r, v1, v2 in zip(trajectory.times, trajectory.taps, trajectory.primary, trajectory.secondary)]
    return ["t", "r", "V1", "V2"], rows
