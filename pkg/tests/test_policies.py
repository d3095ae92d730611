import math

import numpy as np
import pytest

from fillbox import ConfigError, SimConfig
from fillbox import optimal, policies, sir_core
from fillbox.policies import Constant, ControlPolicy, OptimalRamp, Segment, Shifted


def test_policy_validation(fig):
    with pytest.raises(ConfigError):
        ControlPolicy((Segment(1.0, 2.0, Constant(1.0)),))
    with pytest.raises(ConfigError):
        ControlPolicy((Segment(0.0, 2.0, Constant(1.0)), Segment(2.5, 4.0, Constant(1.0))))
    with pytest.raises(ConfigError):
        ControlPolicy((Segment(0.0, 2.0, Constant(-0.1)),))
    with pytest.raises(ConfigError):
        ControlPolicy(())
    with pytest.raises(ConfigError):
        policies.constant_shutdown(fig, -1.0, 0.0, 1.0)
    with pytest.raises(ConfigError):
        policies.piecewise_constant([0.0, 1.0], [0.5, 0.6], 1.0)


def test_rate_is_left_continuous(fig):
    p = policies.constant_shutdown(fig, 0.2, 1.0, 3.0)
    assert p.rate(1.0) == 1.0
    assert p.rate(1.0 + 1e-12) == 0.2
    assert p.rate(3.0) == 0.2
    assert p.rate(0.0) == 1.0


def test_laissez_faire(fig, lf_params):
    for params, feasible in ((fig, False), (lf_params, True)):
        rep = policies.evaluate_cost(params, policies.laissez_faire(params))
        assert rep.cost_numeric == 0.0
        assert rep.feasible is feasible
        assert rep.max_y == pytest.approx(sir_core.peak_infected(params, params.beta), abs=1e-6)
        assert feasible == optimal.laissez_faire_is_optimal(params)


def test_flatten_curve(fig):
    delta = policies.flatten_level(fig)
    assert 0.3 < delta < 1.0
    assert abs(sir_core.peak_infected(fig, delta) - fig.gamma) <= 1e-10
    rep = policies.evaluate_cost(fig, policies.flatten_curve(fig))
    assert rep.max_y == pytest.approx(fig.gamma, abs=1e-4)
    assert rep.feasible
    assert rep.cost_numeric > optimal.optimal_cost_closed_form(fig)


def test_flatten_release_at_wave_peak_breaches(fig):
    # releasing at x = alpha/delta leaves x above alpha/beta and starts a second wave
    rep = policies.evaluate_cost(fig, policies.flatten_curve(fig, release="peak"))
    assert not rep.feasible
    assert rep.max_y == pytest.approx(0.2264, abs=1e-3)
    with pytest.raises(ConfigError):
        policies.flatten_curve(fig, release="later")


def test_flatten_requires_constrained_regime(lf_params):
    with pytest.raises(ConfigError):
        policies.flatten_level(lf_params)


def test_constant_shutdown_costs(fig):
    same = policies.constant_shutdown(fig, fig.beta, 2.0, 8.0)
    assert same.cost(fig.beta) == 0.0
    assert policies.evaluate_cost(fig, same).cost_numeric == 0.0
    full = policies.constant_shutdown(fig, 0.0, 0.0, 30.0)
    assert full.cost(fig.beta) == pytest.approx(30.0, abs=1e-14)
    part = policies.constant_shutdown(fig, 0.35, 2.0, 9.0)
    assert part.cost(fig.beta) == pytest.approx(0.65 * 7.0, abs=1e-14)
    assert policies.evaluate_cost(fig, part).cost_numeric == pytest.approx(0.65 * 7.0, rel=1e-9)


def test_tuned_shutdown_costs_more_than_optimum(fig):
    best = math.inf
    for delta in (0.4, 0.5, 0.6):
        for t0 in (2.0, 4.0):
            for t1 in (15.0, 20.0, 30.0):
                rep = policies.evaluate_cost(fig, policies.constant_shutdown(fig, delta, t0, t1))
                if rep.feasible:
                    best = min(best, rep.cost_numeric)
    assert math.isfinite(best)
    assert best > optimal.optimal_cost_closed_form(fig)


def test_permanent_suppression_is_horizon_capped(fig):
    cfg = SimConfig(t_max=100.0, y_stop=1e-30)
    policy = ControlPolicy((Segment(0.0, 100.0, Constant(0.5)),), name="forever")
    rep = policies.evaluate_cost(fig, policy, cfg)
    assert rep.horizon_capped
    assert rep.cost_numeric == pytest.approx(50.0, rel=1e-9)
    longer = policies.evaluate_cost(fig, ControlPolicy((Segment(0.0, 200.0, Constant(0.5)),)),
                                    SimConfig(t_max=200.0, y_stop=1e-30))
    assert longer.cost_numeric == pytest.approx(2 * rep.cost_numeric, rel=1e-9)


def test_cost_additivity(fig):
    policy, _ = optimal.build_optimal_policy(fig)
    parts = policy.segment_costs(fig.beta)
    assert sum(parts) == pytest.approx(policy.cost(fig.beta), abs=1e-10)
    numeric = [policies.evaluate_cost(fig, policy).cost_numeric]
    assert numeric[0] == pytest.approx(policy.cost(fig.beta), rel=1e-9)


def test_ramp_shortfall_matches_quadrature(fig):
    ramp = OptimalRamp(1.0, 0.2, 11.5)
    shifted = Shifted(ramp, 0.0)
    for a, b in ((5.0, 11.5), (6.0, 9.0), (10.0, 14.0)):
        assert ramp.shortfall(1.0, a, b) == pytest.approx(shifted.shortfall(1.0, a, b), rel=1e-10, abs=1e-13)
    assert Shifted(Constant(0.1), -0.5).rate(0.0) == 0.0


def test_super_beta_policy_costs_nothing(fig):
    policy = policies.constant_shutdown(fig, 1.4, 0.0, 10.0)
    assert policies.evaluate_cost(fig, policy).cost_numeric == 0.0


def test_feasibility_monotone_in_gamma(fig):
    from fillbox import ModelParams

    policy = policies.flatten_curve(fig)
    flags = [policies.evaluate_cost(ModelParams(0.3, 1.0, g, 0.01), policy).feasible for g in (0.15, 0.2, 0.25)]
    assert flags == [False, True, True]


def test_sample_policy(fig):
    p = policies.constant_shutdown(fig, 0.2, 1.0, 2.0)
    np.testing.assert_array_equal(policies.sample_policy(p, np.array([0.5, 1.5, 2.5])), [1.0, 0.2, 1.0])
