#  Copyright (c) 2024 ltc-stability developers

import math

import numpy as np
import pytest

from ltc_stability.common import NetworkError, NoFeasiblePoint, NonPositiveParameter, UnboundedFamily
from ltc_stability.dynamics import Collapsed, Converged, Undecided
from ltc_stability.twobus import (
    FeasiblePair,
    SusceptanceFamily,
    TwoBusEvent,
    TwoBusInfeasible,
    TwoBusParams,
    bl_r_curve,
    critical_susceptance,
    quartic_coefficients,
    scale_params,
    secondary_voltage,
    simulate_twobus,
    tap_equilibria,
    twobus_rows,
)

EXAMPLE = TwoBusParams(E=1.0, R=0.0, X=1.0, G_L=0.8, B_L=0.4)
INDUCTIVE = TwoBusParams(E=1.0, R=0.0, X=1.0, G_L=0.0, B_L=-3 / 16)
EXAMPLE_FAMILY = SusceptanceFamily(E=1.0, R=0.0, X=1.0, kappa=2.0)


def test_params_validation():
    with pytest.raises(NonPositiveParameter):
        TwoBusParams(E=0.0, R=0.0, X=1.0, G_L=0.0, B_L=0.0)
    with pytest.raises(NonPositiveParameter):
        TwoBusParams(E=1.0, R=0.0, X=1.0, G_L=0.0, B_L=0.0, T=-1.0)
    with pytest.raises(NetworkError):
        TwoBusParams(E=1.0, R=0.0, X=0.0, G_L=0.0, B_L=0.0)


def test_quartic_coefficients():
    q = quartic_coefficients(EXAMPLE)
    assert (q.a, q.b, q.c, q.delta) == pytest.approx((1.0, -1.8, 0.8, 0.04))

    q = quartic_coefficients(TwoBusParams(E=2.0, R=0.1, X=1.0, G_L=0.0, B_L=0.0, V_0=1.1))
    assert (q.a, q.b, q.c, q.delta) == pytest.approx((1.21, -4.0, 0.0, 16.0))

    q = quartic_coefficients(INDUCTIVE)
    assert (q.a, q.b, q.c, q.delta) == pytest.approx((1.0, -0.625, 0.03515625, 0.25))


def test_tap_equilibria():
    pair = tap_equilibria(EXAMPLE)
    assert isinstance(pair, FeasiblePair)
    assert pair.r_plus == pytest.approx(1.0, abs=1e-9)
    assert pair.r_minus == pytest.approx(2 * math.sqrt(5) / 5, abs=1e-9)

    pair = tap_equilibria(INDUCTIVE)
    assert pair.r_plus == pytest.approx(0.75, abs=1e-12)
    assert pair.r_minus == pytest.approx(0.25, abs=1e-12)

    infeasible = tap_equilibria(TwoBusParams(E=1.0, R=0.0, X=1.0, G_L=1.0, B_L=0.5))
    assert isinstance(infeasible, TwoBusInfeasible)
    assert infeasible.reason == "negative discriminant"


@pytest.mark.parametrize("params", [EXAMPLE, INDUCTIVE, TwoBusParams(E=1.1, R=0.05, X=0.6, G_L=0.5, B_L=-0.3, V_0=0.95)])
def test_equilibria_properties(params):
    pair = tap_equilibria(params)
    q = quartic_coefficients(params)
    for r in (pair.r_minus, pair.r_plus):
        assert abs(q.a * r**4 + q.b * r**2 + q.c) <= 1e-9
        assert secondary_voltage(params, r) == pytest.approx(params.V_0, abs=1e-9)

    for r in np.linspace(0.01, 2.0, 400):
        if abs(r - pair.r_minus) < 1e-6 or abs(r - pair.r_plus) < 1e-6:
            continue
        inside = pair.r_minus < r < pair.r_plus
        assert (secondary_voltage(params, r) > params.V_0) == inside


def test_critical_susceptance_example_family():
    assert critical_susceptance(EXAMPLE_FAMILY) == pytest.approx((1 + math.sqrt(5)) / 8, abs=1e-8)


def test_critical_susceptance_inductive_family():
    # Delta(s) = (2s - 1)^2 - 4 s^2 = 1 - 4s
    family = SusceptanceFamily(E=1.0, R=0.0, X=1.0, kappa=0.0, sign=-1)
    assert critical_susceptance(family) == pytest.approx(-0.25, abs=1e-8)


def test_critical_susceptance_lossy_family_matches_closed_form():
    family = SusceptanceFamily(E=1.0, R=0.2, X=1.0, kappa=0.5, sign=-1)
    # Delta(s) = (b0 + b1 s)^2 - 4 a c2 s^2 with b linear and c quadratic in s
    b0 = -1.0
    b1 = 2 * (0.2 * 0.5 + 1.0)
    c2 = (0.5**2 + 1.0) * (0.2**2 + 1.0)
    roots = np.roots([b1**2 - 4 * c2, 2 * b0 * b1, b0**2])
    expected = min(r.real for r in roots if abs(r.imag) < 1e-12 and r.real > 0)
    assert critical_susceptance(family) == pytest.approx(-expected, abs=1e-8)


def test_critical_susceptance_errors():
    with pytest.raises(UnboundedFamily):
        critical_susceptance(SusceptanceFamily(E=1.0, R=0.0, X=1.0, kappa=0.0, sign=1))
    with pytest.raises(NoFeasiblePoint):
        critical_susceptance(SusceptanceFamily(E=1.0, R=0.0, X=1.0, kappa=0.0, sign=-1, start=0.3))


def test_bl_r_curve():
    rows = bl_r_curve(EXAMPLE_FAMILY, 101)
    assert len(rows) == 101
    assert rows[0] == pytest.approx((0.0, 0.0, 1.0))
    assert rows[-1][0] == pytest.approx((1 + math.sqrt(5)) / 8, abs=1e-8)
    assert abs(rows[-1][1] - rows[-1][2]) <= 1e-5
    assert all(b_l <= next_b_l for (b_l, _, _), (next_b_l, _, _) in zip(rows, rows[1:]))
    assert all(r_minus <= r_plus for _, r_minus, r_plus in rows)

    pair = tap_equilibria(EXAMPLE_FAMILY.params(0.4))
    assert (pair.r_minus, pair.r_plus) == pytest.approx((2 * math.sqrt(5) / 5, 1.0))


def test_bl_r_curve_shrinks_after_line_trip():
    weak = SusceptanceFamily(E=1.0, R=0.0, X=1.2, kappa=2.0)
    assert bl_r_curve(weak, 10)[-1][0] < bl_r_curve(EXAMPLE_FAMILY, 10)[-1][0]


def test_scale_params():
    p = scale_params(EXAMPLE, x_factor=1.2, load_factor=0.7)
    assert (p.X, p.G_L, p.B_L) == pytest.approx((1.2, 0.56, 0.28))
    assert p.E == EXAMPLE.E


def test_simulate_converges():
    trajectory = simulate_twobus(EXAMPLE, 0.9, horizon=50.0)
    assert trajectory.final[0] == pytest.approx(1.0, abs=1e-3)
    assert np.all(np.diff(trajectory.taps[:, 0]) >= 0)

    trajectory = simulate_twobus(EXAMPLE, 0.9, horizon=100.0)
    assert isinstance(trajectory.verdict, Converged)
    assert trajectory.verdict.limit[0] == pytest.approx(1.0, abs=1e-4)


def test_simulate_collapses_below_threshold():
    trajectory = simulate_twobus(EXAMPLE, 0.89, horizon=50.0)
    assert isinstance(trajectory.verdict, Collapsed)
    assert np.all(np.diff(trajectory.taps[:, 0]) < 0)


def test_simulate_undecided_on_short_horizon():
    trajectory = simulate_twobus(EXAMPLE, 0.95, horizon=1.0)
    assert isinstance(trajectory.verdict, Undecided)
    assert trajectory.times[-1] == pytest.approx(1.0)


def test_simulate_line_trip():
    steady = simulate_twobus(EXAMPLE, 1.0, horizon=60.0, events=[TwoBusEvent(time=10.0, x_factor=1.2)])
    assert isinstance(steady.verdict, Collapsed)
    assert steady.verdict.t_collapse > 10.0

    supported = simulate_twobus(
        EXAMPLE,
        1.0,
        horizon=100.0,
        events=[TwoBusEvent(time=10.0, x_factor=1.2), TwoBusEvent(time=11.0, load_factor=0.7)],
    )
    assert isinstance(supported.verdict, Converged)
    post = tap_equilibria(scale_params(EXAMPLE, 1.2, 0.7))
    assert supported.verdict.limit[0] == pytest.approx(post.r_plus, abs=1e-4)
    assert 10.0 in supported.times and 11.0 in supported.times


def test_twobus_rows():
    trajectory = simulate_twobus(EXAMPLE, 0.9, horizon=1.0)
    header, rows = twobus_rows(trajectory)
    assert header == ["t", "r", "V1", "V2"]
    assert len(rows) == len(trajectory)
    t, r, v1, v2 = rows[0]
    assert (t, r) == (0.0, 0.9)
    assert v1 == pytest.approx(r * v2)
