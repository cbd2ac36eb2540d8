#  Copyright (c) 2024 ltc-stability developers

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, ClassVar, Iterable, Sequence, Union

import numpy as np

from ltc_stability.common import (
    DISCRETE_DEADBAND,
    DISCRETE_PERIOD,
    DISCRETE_STEP,
    R_MIN,
    NonPositiveTap,
    SingularSystem,
    as_vector,
)
from ltc_stability.network import Event, Network, load_voltages

RATE_TOL = 1e-8
LIMIT_TOL = 1e-4
HOLD_STEPS = 3

# Evaluation of the right-hand side returns (r_dot, primary voltages, secondary voltages)
RightHandSide = Callable[[np.ndarray], "tuple[np.ndarray, np.ndarray, np.ndarray]"]


@dataclass(frozen=True, eq=False)
class Converged:
    limit: np.ndarray
    kind: ClassVar[str] = "Converged"


@dataclass(frozen=True)
class Collapsed:
    t_collapse: float
    kind: ClassVar[str] = "Collapsed"


@dataclass(frozen=True)
class Undecided:
    kind: ClassVar[str] = "Undecided"


Verdict = Union[Converged, Collapsed, Undecided]


def verdict_record(verdict: Verdict) -> dict:
    record: dict = {"verdict": verdict.kind}
    if isinstance(verdict, Converged):
        record["limit"] = verdict.limit
    elif isinstance(verdict, Collapsed):
        record["t_collapse"] = verdict.t_collapse
    return record


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-stamped tap positions with the voltages seen along the way and a terminal verdict."""

    times: np.ndarray
    taps: np.ndarray
    primary: np.ndarray
    secondary: np.ndarray
    verdict: Verdict

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.taps[-1]


@dataclass(frozen=True, eq=False)
class DiscreteLtcConfig:
    """Deadband, tap step and sampling period of a discrete tap changer, scalars or one value per load."""

    deadband: float | np.ndarray = DISCRETE_DEADBAND
    step: float | np.ndarray = DISCRETE_STEP
    period: float = DISCRETE_PERIOD

    def __post_init__(self):
        assert np.all(np.asarray(self.deadband) >= 0), "Deadband has to be non-negative!"
        assert np.all(np.asarray(self.step) > 0), "Tap step has to be positive!"
        assert self.period > 0, "Sampling period has to be positive!"

    def broadcast(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        return as_vector(self.deadband, n, "deadband"), as_vector(self.step, n, "step")


@dataclass(frozen=True, eq=False)
class ModelComparison:
    continuous: Trajectory
    discrete: Trajectory

    @property
    def agree(self) -> bool:
        return self.continuous.verdict.kind == self.discrete.verdict.kind


def rk4_integrate(
    phases: Sequence[tuple[float, RightHandSide]],
    r0,
    horizon: float,
    dt: float,
    settled: Callable[[np.ndarray, np.ndarray], bool],
    r_min: float = R_MIN,
    stop_when_settled: bool = True,
) -> Trajectory:
    """Classic fourth order Runge-Kutta over consecutive phases of a piecewise defined vector field.

    Every phase starts at its own time, so the step grid is aligned to the switching instants.
    The `settled` test is only applied once the last phase is active.
    """
    assert horizon > 0 and dt > 0, "Horizon and time step have to be positive!"
    assert phases and phases[0][0] <= 0, "The first phase has to start at time 0!"
    r = np.array(as_vector(r0), dtype=float)

    times: list[float] = []
    taps: list[np.ndarray] = []
    primary: list[np.ndarray] = []
    secondary: list[np.ndarray] = []

    def finish(verdict: Verdict) -> Trajectory:
        return Trajectory(
            times=np.asarray(times),
            taps=np.asarray(taps).reshape(len(times), r.size),
            primary=np.asarray(primary).reshape(len(times), r.size),
            secondary=np.asarray(secondary).reshape(len(times), r.size),
            verdict=verdict,
        )

    def collapsed(t: float) -> Trajectory:
        logging.info(f"Voltage collapse detected at t={t:.4g}")
        return finish(Collapsed(t_collapse=t))

    if np.any(r <= r_min):
        times.append(0.0)
        taps.append(r.copy())
        primary.append(np.full(r.size, np.nan))
        secondary.append(np.full(r.size, np.nan))
        return collapsed(0.0)

    active = [(max(start, 0.0), vector_field) for start, vector_field in phases if start < horizon]
    t = 0.0
    r_dot = V = V_s = None
    for index, (start, vector_field) in enumerate(active):
        is_last = index == len(active) - 1
        end = horizon if is_last else active[index + 1][0]
        try:
            r_dot, V, V_s = vector_field(r)
        except (SingularSystem, NonPositiveTap):
            return collapsed(t)
        if index == 0:
            times.append(t)
            taps.append(r.copy())
            primary.append(V)
            secondary.append(V_s)

        if is_last and stop_when_settled and settled(r, r_dot):
            return finish(Converged(limit=r.copy()))

        num_steps = max(1, math.ceil((end - start) / dt - 1e-9)) if end > start else 0
        h = (end - start) / num_steps if num_steps else 0.0
        for step in range(num_steps):
            t_next = start + (step + 1) * h
            try:
                k1 = r_dot
                k2 = vector_field(r + 0.5 * h * k1)[0]
                k3 = vector_field(r + 0.5 * h * k2)[0]
                k4 = vector_field(r + h * k3)[0]
                r_next = r + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                if not np.all(np.isfinite(r_next)) or np.any(r_next <= r_min):
                    return collapsed(t_next)
                r_dot, V, V_s = vector_field(r_next)
            except (SingularSystem, NonPositiveTap):
                return collapsed(t_next)

            r, t = r_next, t_next
            times.append(t)
            taps.append(r.copy())
            primary.append(V)
            secondary.append(V_s)
            if is_last and stop_when_settled and settled(r, r_dot):
                return finish(Converged(limit=r.copy()))

    if r_dot is not None and settled(r, r_dot):
        return finish(Converged(limit=r.copy()))
    return finish(Undecided())


def rhs(net: Network, r) -> np.ndarray:
    """Tap velocities (V_s(r) - V_0) / T."""
    _, V_s = load_voltages(net, r)
    return (V_s - net.setpoints) / net.time_constants


def _network_rhs(net: Network) -> RightHandSide:
    def evaluate(r: np.ndarray):
        V, V_s = load_voltages(net, r)
        return (V_s - net.setpoints) / net.time_constants, V, V_s

    return evaluate


def network_phases(net: Network, events: Iterable[Event] = ()) -> list[tuple[float, Network]]:
    """Networks in force between consecutive event times, starting with `net` at t=0."""
    phases = [(0.0, net)]
    for event in sorted(events, key=lambda x: x.time):
        assert event.time >= 0, f"Event times have to be non-negative, got {event.time}!"
        current = phases[-1][1].apply_event(event)
        if event.time <= phases[-1][0]:
            phases[-1] = (phases[-1][0], current)
        else:
            phases.append((event.time, current))
    return phases


def _equilibrium_test(net: Network, alpha, rate_tol: float, limit_tol: float):
    if alpha is None:
        from ltc_stability.equilibria import Equilibrium, find_alpha

        result = find_alpha(net)
        alpha = result.r_star if isinstance(result, Equilibrium) else None
        if alpha is None:
            logging.info("Active network has no equilibrium, only the rate criterion is used")

    def settled(r: np.ndarray, r_dot: np.ndarray) -> bool:
        if np.max(np.abs(r_dot)) >= rate_tol:
            return False
        return alpha is None or np.max(np.abs(r - alpha)) < limit_tol

    return settled


def integrate_continuous(
    net: Network,
    r0,
    horizon: float | None = None,
    dt: float | None = None,
    events: Iterable[Event] = (),
    alpha=None,
    r_min: float = R_MIN,
    rate_tol: float = RATE_TOL,
    limit_tol: float = LIMIT_TOL,
) -> Trajectory:
    """Continuous LTC dynamics T_i dr_i/dt = V_s,i(r) - V_0,i integrated with RK4.

    Args:
        net: Network in force at t=0.
        r0: Initial tap ratios.
        horizon: Simulated time in seconds. Defaults to 200 times the largest time constant.
        dt: Integration step. Defaults to 1% of the smallest time constant.
        events: Timed network changes, applied exactly at their time instants.
        alpha: Equilibrium of the final network the trajectory is expected to approach.
               When missing it is computed; if the final network has none, only the rate criterion is used.
        r_min: Collapse floor for tap ratios.
    """
    r0 = as_vector(r0, net.n_load, "r0")
    horizon = horizon if horizon is not None else 200 * float(np.max(net.time_constants))
    dt = dt if dt is not None else float(np.min(net.time_constants)) / 100
    phases = network_phases(net, events)
    settled = _equilibrium_test(phases[-1][1], alpha, rate_tol, limit_tol)
    return rk4_integrate(
        [(start, _network_rhs(phase_net)) for start, phase_net in phases],
        r0,
        horizon=horizon,
        dt=dt,
        settled=settled,
        r_min=r_min,
    )


def step_discrete(net: Network, r, cfg: DiscreteLtcConfig) -> np.ndarray:
    """One sampling instant of the discrete tap changers; equality with a deadband edge holds the tap."""
    r = as_vector(r, net.n_load, "r")
    deadband, step = cfg.broadcast(net.n_load)
    _, V_s = load_voltages(net, r)
    return _discrete_move(r, V_s, net.setpoints, deadband, step)


def _discrete_move(r, V_s, V_0, deadband, step) -> np.ndarray:
    move = np.where(V_s > V_0 + deadband, step, 0.0) - np.where(V_s < V_0 - deadband, step, 0.0)
    return r + move


def simulate_discrete(
    net: Network,
    r0,
    cfg: DiscreteLtcConfig | None = None,
    max_steps: int = 1000,
    events: Iterable[Event] = (),
    r_min: float = R_MIN,
    hold_steps: int = HOLD_STEPS,
) -> Trajectory:
    """Discrete tap changers sampled every `cfg.period` seconds.

    Converged once no tap moved for `hold_steps` consecutive samples after the last event.
    """
    cfg = cfg or DiscreteLtcConfig()
    deadband, step = cfg.broadcast(net.n_load)
    r = np.array(as_vector(r0, net.n_load, "r0"))
    phases = network_phases(net, events)
    last_switch = phases[-1][0]

    times: list[float] = []
    taps: list[np.ndarray] = []
    primary: list[np.ndarray] = []
    secondary: list[np.ndarray] = []

    def finish(verdict: Verdict) -> Trajectory:
        n = net.n_load
        return Trajectory(
            times=np.asarray(times),
            taps=np.asarray(taps).reshape(len(times), n),
            primary=np.asarray(primary).reshape(len(times), n),
            secondary=np.asarray(secondary).reshape(len(times), n),
            verdict=verdict,
        )

    still = 0
    for k in range(max_steps + 1):
        t = k * cfg.period
        active = [phase_net for start, phase_net in phases if start <= t][-1]
        if np.any(r <= r_min):
            logging.info(f"Discrete tap changers collapsed at t={t:.4g}")
            return finish(Collapsed(t_collapse=t))
        try:
            V, V_s = load_voltages(active, r)
        except (SingularSystem, NonPositiveTap):
            return finish(Collapsed(t_collapse=t))
        times.append(t)
        taps.append(r.copy())
        primary.append(V)
        secondary.append(V_s)
        if k == max_steps:
            break

        r_next = _discrete_move(r, V_s, active.setpoints, deadband, step)
        still = still + 1 if np.array_equal(r_next, r) else 0
        r = r_next
        if still >= hold_steps and t >= last_switch:
            return finish(Converged(limit=r.copy()))
    return finish(Undecided())


def compare_models(
    net: Network,
    r0,
    cfg: DiscreteLtcConfig | None = None,
    horizon: float | None = None,
    dt: float | None = None,
    max_steps: int = 1000,
    events: Iterable[Event] = (),
) -> ModelComparison:
    """Run the continuous and the discrete tap changer models from the same start."""
    return ModelComparison(
        continuous=integrate_continuous(net, r0, horizon=horizon, dt=dt, events=events),
        discrete=simulate_discrete(net, r0, cfg=cfg, max_steps=max_steps, events=events),
    )


def trajectory_rows(trajectory: Trajectory, labels: Sequence | None = None) -> tuple[list[str], list[list[float]]]:
    """Header and rows (t, r_1..r_n, Vs_1..Vs_n) of a trajectory for CSV export."""
    n = trajectory.taps.shape[1]
    labels = list(labels) if labels is not None else [str(i + 1) for i in range(n)]
    header = ["t"] + [f"r_{x}" for x in labels] + [f"Vs_{x}" for x in labels]
    rows = [[t, *r, *v] for t, r, v in zip(trajectory.times, trajectory.taps, trajectory.secondary)]
    return header, rows
