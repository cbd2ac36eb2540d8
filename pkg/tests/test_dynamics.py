#  Copyright (c) 2024 ltc-stability developers

import numpy as np
import pytest
from conftest import one_load

from ltc_stability.dynamics import (
    Collapsed,
    Converged,
    DiscreteLtcConfig,
    Undecided,
    compare_models,
    integrate_continuous,
    rhs,
    simulate_discrete,
    step_discrete,
    trajectory_rows,
    verdict_record,
)
from ltc_stability.equilibria import RegionPWitness, find_alpha, in_region_P


@pytest.mark.parametrize("r, expected", [(0.75, 0.0), (0.5, 1 / 7), (0.9, 0.9 / (0.81 + 0.1875) - 1)])
def test_rhs_one_load(one_load_net, r, expected):
    assert rhs(one_load_net, [r]) == pytest.approx([expected], abs=1e-12)


def test_rhs_uses_time_constants():
    assert rhs(one_load(T=4.0), [0.5]) == pytest.approx([1 / 28], abs=1e-12)


def test_continuous_converges_inside_region(one_load_net):
    trajectory = integrate_continuous(one_load_net, [0.5])
    assert isinstance(trajectory.verdict, Converged)
    assert trajectory.verdict.limit == pytest.approx([0.75], abs=1e-4)
    assert np.all(np.diff(trajectory.times) > 0)
    assert np.all(np.diff(trajectory.taps[:, 0]) >= 0)


def test_continuous_collapses_below_region(one_load_net):
    trajectory = integrate_continuous(one_load_net, [0.2])
    assert isinstance(trajectory.verdict, Collapsed)
    assert trajectory.verdict.t_collapse > 0
    assert np.all(np.diff(trajectory.taps[:, 0]) < 0)


def test_continuous_starting_at_equilibrium(chain_net):
    alpha = find_alpha(chain_net).r_star
    trajectory = integrate_continuous(chain_net, alpha)
    assert isinstance(trajectory.verdict, Converged)
    assert len(trajectory) == 1
    assert trajectory.final == pytest.approx(alpha)


def test_continuous_below_floor_collapses_at_start(one_load_net):
    trajectory = integrate_continuous(one_load_net, [1e-4])
    assert isinstance(trajectory.verdict, Collapsed)
    assert trajectory.verdict.t_collapse == 0.0


def test_continuous_short_horizon_is_undecided(one_load_net):
    trajectory = integrate_continuous(one_load_net, [0.5], horizon=1.0)
    assert isinstance(trajectory.verdict, Undecided)
    assert trajectory.times[-1] == pytest.approx(1.0)


def test_region_is_invariant(symmetric_net):
    alpha = find_alpha(symmetric_net).r_star
    r0 = np.array([0.5, 0.5])
    assert isinstance(in_region_P(symmetric_net, r0), RegionPWitness)

    trajectory = integrate_continuous(symmetric_net, r0)
    assert isinstance(trajectory.verdict, Converged)
    assert trajectory.final == pytest.approx(alpha, abs=1e-4)
    assert np.all(np.diff(trajectory.taps, axis=0) >= -1e-12)
    for r in trajectory.taps[:: max(1, len(trajectory) // 20)]:
        assert isinstance(in_region_P(symmetric_net, r), RegionPWitness)


@pytest.mark.parametrize("gamma", [0.5, 2.0])
@pytest.mark.parametrize("r0", [0.5, 0.2, 0.9])
def test_time_constant_scaling_keeps_verdict(one_load_net, gamma, r0):
    base = integrate_continuous(one_load_net, [r0])
    scaled = integrate_continuous(one_load_net.scale_time_constants(gamma), [r0])
    assert scaled.verdict.kind == base.verdict.kind
    if isinstance(base.verdict, Collapsed):
        assert scaled.verdict.t_collapse == pytest.approx(gamma * base.verdict.t_collapse, rel=1e-2)


def test_continuous_with_line_removal(mesh_file):
    net = mesh_file.network
    post = net
    for event in mesh_file.events:
        post = post.apply_event(event)
    alpha_post = find_alpha(post).r_star

    r0 = np.full(net.n_load, 1.2)
    trajectory = integrate_continuous(net, r0, horizon=1000.0, events=mesh_file.events)
    assert isinstance(trajectory.verdict, Converged)
    assert trajectory.verdict.limit == pytest.approx(alpha_post, abs=1e-4)
    assert 10.0 in trajectory.times


def test_step_discrete_branches():
    # V_s(0.5) = 8/7 on the one-load network; the setpoint places it above, inside and below the deadband
    cfg = DiscreteLtcConfig(deadband=0.01, step=0.0125)
    for offset, expected in [(0.02, 0.5125), (0.005, 0.5), (-0.005, 0.5), (-0.02, 0.4875)]:
        net = one_load(V_0=8 / 7 - offset)
        assert step_discrete(net, [0.5], cfg) == pytest.approx([expected])


def test_discrete_converges_near_equilibrium(one_load_net):
    trajectory = simulate_discrete(one_load_net, [0.5])
    assert isinstance(trajectory.verdict, Converged)
    assert abs(trajectory.verdict.limit[0] - 0.75) <= 0.0125 + 0.01
    assert np.all(np.diff(trajectory.times) == pytest.approx(10.0))


def test_discrete_collapses(one_load_net):
    trajectory = simulate_discrete(one_load_net, [0.2])
    assert isinstance(trajectory.verdict, Collapsed)


def test_discrete_wide_deadband_holds(one_load_net):
    trajectory = simulate_discrete(one_load_net, [0.3], cfg=DiscreteLtcConfig(deadband=1.0))
    assert isinstance(trajectory.verdict, Converged)
    assert trajectory.verdict.limit == pytest.approx([0.3])
    assert np.all(trajectory.taps == 0.3)


def test_discrete_undecided_when_out_of_steps(one_load_net):
    trajectory = simulate_discrete(one_load_net, [0.5], max_steps=2)
    assert isinstance(trajectory.verdict, Undecided)
    assert len(trajectory) == 3


@pytest.mark.parametrize("r0", [0.3, 0.5, 0.9, 1.5, 0.2, 0.1])
def test_models_agree_away_from_boundary(one_load_net, r0):
    assert compare_models(one_load_net, [r0]).agree


def test_models_agree_on_chain(chain_net):
    for r0 in ([1.0, 1.0], [1.5, 1.5], [0.1, 0.1]):
        comparison = compare_models(chain_net, r0)
        assert comparison.agree, r0


def test_trajectory_rows(chain_net):
    trajectory = integrate_continuous(chain_net, [1.0, 1.0], horizon=0.5)
    header, rows = trajectory_rows(trajectory, labels=["L1", "L2"])
    assert header == ["t", "r_L1", "r_L2", "Vs_L1", "Vs_L2"]
    assert len(rows) == len(trajectory)
    assert rows[0][:3] == pytest.approx([0.0, 1.0, 1.0])


def test_verdict_record():
    assert verdict_record(Undecided()) == {"verdict": "Undecided"}
    assert verdict_record(Collapsed(t_collapse=3.0)) == {"verdict": "Collapsed", "t_collapse": 3.0}
    record = verdict_record(Converged(limit=np.array([0.75])))
    assert record["verdict"] == "Converged"
