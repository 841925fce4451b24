import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from aoi_netcalc.bounds import (
    BoundCurve,
    SubsystemAnalysis,
    age_bound_constant_rate,
    age_bound_general,
    age_bound_periodic,
    delay_bound,
    evaluate_point,
    evaluate_point_enumerated,
    invert_quantile,
    optimize_split,
    optimize_theta,
    parallel_ccdf,
    stieltjes_exp_conv,
    sweep,
    system_age_curve,
    system_delay_curve,
)
from aoi_netcalc.envelopes import (
    ArrivalEnvelope,
    EnvelopeSet,
    ExpProfile,
    LowerArrivalEnvelope,
    ServiceEnvelope,
    poisson_arrival_envelope,
    poisson_arrival_profiles,
    poisson_arrival_rate,
    poisson_service_rate,
)
from aoi_netcalc.errors import DomainError, InfeasibleError, ParameterError, SimulationOnlyError, UnboundedQuantileError
from aoi_netcalc.models import (
    ConstantRate,
    JoinShortestQueue,
    MarkovModulated,
    OnOffParams,
    Periodic,
    PoissonPackets,
    PoissonService,
    RandomWeighted,
    RoundRobin,
    SystemSpec,
)
from aoi_netcalc.envelopes import onoff_transition
from aoi_netcalc.sim import SimScenario, simulate
from oracles import conv_cases, md1_quantile, md1_theta_max, mm1_age_bound, stieltjes_numeric


# --------------------------------------------------------------------------- exponential convolution


@pytest.mark.parametrize(
    "args,expected",
    [
        ((1.0, 1.0, 1.0, 1.0), 2 * math.exp(-1)),
        ((1.0, 2.0, 1.0, 3.0), math.exp(-3) + (math.exp(-3) - math.exp(-6))),
        ((2.0, 1.0, 1.0, 2.0), 2 * (1 - math.log(2) + 2) * math.exp(-2)),
    ],
)
def test_conv_examples(args, expected):
    assert stieltjes_exp_conv(*args) == pytest.approx(expected, rel=1e-12)


def test_conv_example_values_rounded():
    assert round(stieltjes_exp_conv(1, 1, 1, 1), 5) == 0.73576
    # the formula evaluates to 0.097095; the commonly quoted 0.09711 is off in the last digit
    assert stieltjes_exp_conv(1, 2, 1, 3) == pytest.approx(0.09711, abs=2e-5)
    # 2 (3 - ln 2) e^-2 = 0.624397, commonly quoted as 0.6245
    assert stieltjes_exp_conv(2, 1, 1, 2) == pytest.approx(0.6245, abs=2e-4)


def test_conv_alpha_above_one_against_million_point_trapezoid():
    assert stieltjes_exp_conv(2, 1, 1, 2) == pytest.approx(stieltjes_numeric(2, 1, 1, 2, n=1_000_001), abs=1e-6)


@pytest.mark.parametrize("alpha", [0.3, 1.0, 3.0])
@pytest.mark.parametrize("v1,v2", [(1.0, 1.0), (2.0, 0.5), (0.5, 2.0)])
def test_conv_matches_textbook_cases(alpha, v1, v2):
    x = math.log(alpha) / v1 + 2.0 if alpha > 1 else 2.0
    assert stieltjes_exp_conv(alpha, v1, v2, x) == pytest.approx(conv_cases(alpha, v1, v2, x), rel=1e-10)


def test_conv_domain_and_parameters():
    with pytest.raises(DomainError):
        stieltjes_exp_conv(math.e, 1.0, 1.0, 0.5)
    with pytest.raises(ParameterError):
        stieltjes_exp_conv(0.0, 1.0, 1.0, 1.0)
    assert 0.0 <= stieltjes_exp_conv(50.0, 0.1, 3.0, math.log(50) / 0.1) <= 1.0


# --------------------------------------------------------------------------- general bound


def test_general_bound_degenerate_service_reduces_to_arrival_profile():
    over, under = poisson_arrival_profiles(1.0, 2.0, 1.0)
    huge = ServiceEnvelope(1e12, None)
    env = EnvelopeSet(ArrivalEnvelope(1.0, over), under, huge)
    for x in (0.5, 1.0, 3.0):
        assert age_bound_general(env, x, l_max=0.0) == pytest.approx(float(under.profile(x)), rel=1e-9)


def test_general_bound_matches_dual_implementation_at_optimum():
    l, w, r, x = 1.0, 1.0, 2.0, 10.0
    p, th = SubsystemAnalysis(PoissonPackets(l, w), PoissonService(r)).age(x)
    assert p == pytest.approx(mm1_age_bound(l, w, r, x, th.theta_a, th.theta_s, th.theta_t), rel=1e-12, abs=1e-15)


def test_general_bound_fixed_theta_matches_dual_implementation():
    l, w, r, x = 1.0, 1.0, 2.0, 10.0
    th_s, th_t, th_a = 0.4, 0.7, 0.3
    assert poisson_arrival_rate(l, w, th_a) <= poisson_service_rate(r, th_s)
    over, under = poisson_arrival_profiles(l, w, th_a)
    env = EnvelopeSet(
        ArrivalEnvelope(poisson_arrival_rate(l, w, th_a), over),
        under,
        ServiceEnvelope(poisson_service_rate(r, th_s), ExpProfile(1.0, th_s)),
        ServiceEnvelope(poisson_service_rate(r, th_t), ExpProfile(1.0, th_t)),
    )
    assert age_bound_general(env, x, l_max=l) == pytest.approx(mm1_age_bound(l, w, r, x, th_a, th_s, th_t), rel=1e-12)


def test_optimum_beats_random_feasible_tuples():
    l, w, r, x = 1.0, 1.0, 2.0, 10.0
    best = optimize_theta(PoissonPackets(l, w), PoissonService(r), x)[3]
    rng = np.random.default_rng(17)
    checked = 0
    while checked < 100:
        th_s, th_t, th_a = 10 ** rng.uniform(-4, 2, size=3)
        if poisson_arrival_rate(l, w, th_a) > poisson_service_rate(r, th_s):
            continue
        assert best <= mm1_age_bound(l, w, r, x, th_a, th_s, th_t) + 1e-12
        checked += 1


def test_general_bound_below_floor_and_infeasible():
    over, under = poisson_arrival_profiles(1.0, 1.0, 0.5)
    svc = ServiceEnvelope(2.0, ExpProfile(1.0, 0.5), l_max=1.0)
    env = EnvelopeSet(ArrivalEnvelope(1.3, over), under, svc)
    assert age_bound_general(env, 0.5 - 1e-9) == 1.0
    bad = EnvelopeSet(ArrivalEnvelope(2.5, over), under, svc)
    with pytest.raises(InfeasibleError):
        age_bound_general(bad, 5.0)


def test_optimizer_rejects_unstable_system():
    with pytest.raises(InfeasibleError):
        optimize_theta(PoissonPackets(1.0, 0.5), PoissonService(2.0), 5.0)


# --------------------------------------------------------------------------- constant rate


def test_constant_rate_recipe_and_floor():
    l, w, r, x = 1.0, 1.0, 2.0, 6.0
    th = md1_theta_max(l, w, r)
    upper = poisson_arrival_envelope(l, w, th)
    _, lower = poisson_arrival_profiles(l, w, th)
    expected = math.exp(-th * (r * x - l)) + math.exp(-(x - l / r) / w)
    assert age_bound_constant_rate(upper, lower, r, l, x) == pytest.approx(expected, rel=1e-9)
    _, lower2 = poisson_arrival_profiles(1.0, 2.0, 0.1)
    assert age_bound_constant_rate(poisson_arrival_envelope(1.0, 2.0, 0.1), lower2, 1.0, 1.0, 1.0) == 1.0


def test_optimizer_matches_one_dimensional_golden_section():
    l, w, r = 1.0, 1.0, 2.0
    th_max = md1_theta_max(l, w, r)
    an = SubsystemAnalysis(PoissonPackets(l, w), ConstantRate(r))
    for x in (2.0, 6.0, 15.0):
        f = lambda t: math.exp(-t * (r * x - l)) + math.exp(-(x - l / r) / w)
        res = minimize_scalar(f, bounds=(1e-4, th_max), method="bounded", options={"xatol": 1e-12})
        assert an.age(x)[0] == pytest.approx(min(res.fun, 1.0), rel=1e-6)


def test_constant_rate_dominated_by_poisson_service_bound():
    x = 6.0
    det = SubsystemAnalysis(PoissonPackets(1.0, 1.0), ConstantRate(2.0)).age(x)[0]
    rnd = SubsystemAnalysis(PoissonPackets(1.0, 1.0), PoissonService(2.0)).age(x)[0]
    assert det <= rnd


# --------------------------------------------------------------------------- periodic arrivals


def test_periodic_worst_phase_arguments():
    rate, th, l, w, x = 2.0, 0.5, 1.0, 1.5, 7.0
    svc = ServiceEnvelope(rate, ExpProfile(1.0, th))
    got = age_bound_periodic(Periodic(l, w), svc, svc, x, 0.0)
    expected = math.exp(-th * (rate * (x - l / rate) - l)) + math.exp(-th * (rate * (x - w) - l))
    assert got == pytest.approx(expected, rel=1e-12)


def test_periodic_best_phase_is_strictly_smaller():
    rate, th, l, w, x = 2.0, 0.5, 1.0, 1.5, 7.0
    svc = ServiceEnvelope(rate, ExpProfile(1.0, th))
    worst = age_bound_periodic(Periodic(l, w), svc, svc, x, 0.0)
    near_best = age_bound_periodic(Periodic(l, w), svc, svc, x, w - 1e-12)
    # second-term argument approaches rho x - l
    limit = math.exp(-th * (rate * x - l)) + math.exp(-th * (rate * x - l))
    assert near_best == pytest.approx(limit, rel=1e-9)
    assert near_best < worst


def test_periodic_floor_and_infeasible():
    svc = ServiceEnvelope(2.0, ExpProfile(1.0, 0.5))
    assert age_bound_periodic(Periodic(1.0, 1.0), svc, svc, 1.5 - 1e-9) == 1.0
    with pytest.raises(InfeasibleError):
        age_bound_periodic(Periodic(1.0, 0.4), svc, svc, 5.0)


def _dm1_quantile(w, eps=1e-3):
    return invert_quantile(system_age_curve(SystemSpec(Periodic(1.0, w), (PoissonService(2.0),))), eps)


def test_dm1_sweep_has_interior_minimum_and_increasing_tail():
    ws = np.linspace(0.55, 5.0, 30)
    q = np.array([_dm1_quantile(w, 1e-6) for w in ws])
    i = int(np.argmin(q))
    assert 0 < i < len(ws) - 1
    assert np.all(np.diff(q[i + 3:]) > 0)


@pytest.mark.slow
@pytest.mark.parametrize("w", [0.7, 1.5, 3.0, 5.0])
def test_dm1_bound_dominates_simulated_peak_age(w):
    system = SystemSpec(Periodic(1.0, w), (PoissonService(2.0),))
    res = simulate(SimScenario(system, 1_000_000, 11, (1e-3,)))
    assert res.peak_age_quantiles[1e-3] <= _dm1_quantile(w)


# --------------------------------------------------------------------------- delay


def test_delay_bound_degenerate_and_shift():
    assert delay_bound(ArrivalEnvelope(1.0, None), ServiceEnvelope(2.0, None), 0.5) == 0.0
    over, under = poisson_arrival_profiles(1.0, 1.0, 0.5)
    arr = ArrivalEnvelope(poisson_arrival_rate(1.0, 1.0, 0.5), over)
    svc = ServiceEnvelope(poisson_service_rate(2.0, 0.5), ExpProfile(1.0, 0.5))
    env = EnvelopeSet(arr, under, svc)
    for x in (1.0, 4.0, 10.0):
        d = delay_bound(arr, svc, x)
        first_term_only = age_bound_general(EnvelopeSet(arr, LowerArrivalEnvelope(1.0, ExpProfile(1e-300, 1.0)), svc), x, l_max=1.0)
        assert d <= first_term_only + 1e-12
        assert d <= age_bound_general(env, x, l_max=1.0)


def test_delay_quantile_below_age_quantile_across_sweep():
    system = SystemSpec(PoissonPackets(1.0, 1.0), (PoissonService(2.0),))
    for row in sweep(system, np.linspace(0.6, 5.0, 12), 1e-6):
        assert row.stable
        assert row.delay_quantile < row.age_quantile


# --------------------------------------------------------------------------- curves and quantiles


def test_invert_quantile_analytic():
    curve = BoundCurve.from_function(lambda x: math.exp(-x))
    assert invert_quantile(curve, math.exp(-5)) == pytest.approx(5.0, abs=1e-6)
    assert invert_quantile(curve, 1e-3) <= invert_quantile(curve, 1e-4)
    with pytest.raises(ParameterError):
        invert_quantile(curve, 1.0)
    with pytest.raises(UnboundedQuantileError):
        invert_quantile(BoundCurve.from_function(lambda x: 0.5), 0.1)


def test_invert_quantile_md1_against_bisection_oracle():
    curve = system_age_curve(SystemSpec(PoissonPackets(1.0, 1.0), (ConstantRate(2.0),)))
    assert invert_quantile(curve, 1e-6) == pytest.approx(md1_quantile(1.0, 1.0, 2.0, 1e-6), abs=1e-5)


def test_parallel_ccdf_ignores_uninformative_factor():
    a = BoundCurve.from_function(lambda x: 0.3)
    one = BoundCurve.from_function(lambda x: 1.0)
    assert parallel_ccdf([a, one], 2.0) == pytest.approx(0.3)
    assert parallel_ccdf([a, BoundCurve.from_function(lambda x: 2.0)], 2.0) == pytest.approx(0.3)


def test_exponential_tail_slope_md1():
    l, w, r = 1.0, 1.0, 2.0
    curve = system_age_curve(SystemSpec(PoissonPackets(l, w), (ConstantRate(r),)))
    lo, hi = 2 * invert_quantile(curve, 1e-3), invert_quantile(curve, 1e-9)
    xs = np.linspace(lo, hi, 20)
    slope = np.polyfit(xs, np.log([curve(x) for x in xs]), 1)[0]
    decay = min(md1_theta_max(l, w, r) * r, 1.0 / w)
    assert slope == pytest.approx(-decay, rel=0.02)


def test_bound_values_are_probabilities():
    curve = system_age_curve(SystemSpec(PoissonPackets(1.0, 1.0), (PoissonService(2.0),)))
    for x in np.linspace(0.0, 80.0, 30):
        assert 0.0 <= curve(x) <= 1.0


# --------------------------------------------------------------------------- systems and sweeps


def test_equal_random_split_doubles_interarrival():
    s = SystemSpec(PoissonPackets(1.0, 0.5), (PoissonService(1.0), PoissonService(1.0)))
    assert [a.mean_interarrival for a in s.subsystem_arrivals()] == [1.0, 1.0]


def test_heterogeneous_weights_rescale_rates():
    s = SystemSpec(PoissonPackets(1.0, 0.3), (PoissonService(1.0), PoissonService(4.0)), RandomWeighted((0.2, 0.8)))
    a = s.subsystem_arrivals()
    assert a[0].mean_interarrival == pytest.approx(1.5)
    assert a[1].mean_interarrival == pytest.approx(0.375)


def test_round_robin_periodic_offsets():
    s = SystemSpec(Periodic(1.0, 1.0), (PoissonService(1.0),) * 3, RoundRobin())
    sub = s.subsystem_arrivals()
    assert [p.period for p in sub] == [3.0] * 3
    assert [p.offset for p in sub] == [0.0, 1.0, 2.0]


def test_simulation_only_policies_are_rejected():
    with pytest.raises(SimulationOnlyError):
        sweep(SystemSpec(PoissonPackets(1, 1), (PoissonService(1),) * 2, JoinShortestQueue()), [1.0], 1e-6)
    with pytest.raises(SimulationOnlyError):
        sweep(SystemSpec(PoissonPackets(1, 1), (PoissonService(1),) * 2, RoundRobin()), [1.0], 1e-6)


def test_unstable_rows_are_flagged_not_dropped():
    system = SystemSpec(PoissonPackets(1.0, 1.0), (PoissonService(2.0),))
    rows = sweep(system, [0.4, 1.0], 1e-6)
    assert len(rows) == 2
    assert not rows[0].stable and math.isnan(rows[0].age_quantile) and rows[0].error
    assert rows[1].stable and math.isfinite(rows[1].age_quantile)


def test_sweep_is_order_independent_and_parallel_safe():
    system = SystemSpec(PoissonPackets(1.0, 1.0), (PoissonService(2.0),))
    ws = [0.8, 1.5, 3.0]
    a = sweep(system, ws, 1e-6)
    b = sweep(system, ws[::-1], 1e-6)[::-1]
    c = sweep(system, ws, 1e-6, jobs=2)
    assert repr(a) == repr(b) == repr(c)


def test_thetas_reported_at_quantile():
    row = evaluate_point(SystemSpec(PoissonPackets(1.0, 1.0), (PoissonService(2.0),)), 1.0, 1e-6)
    assert row.theta_a > 0 and row.theta_s > 0 and row.theta_t > 0
    assert poisson_arrival_rate(1.0, 1.0, row.theta_a) <= poisson_service_rate(2.0, row.theta_s) * (1 + 1e-9)


def test_zero_weight_subsystem_contributes_nothing():
    single = SystemSpec(PoissonPackets(1.0, 1.0), (PoissonService(2.0),))
    padded = SystemSpec(PoissonPackets(1.0, 1.0), (PoissonService(2.0), PoissonService(1.0)), RandomWeighted((1.0, 0.0)))
    assert invert_quantile(system_age_curve(padded), 1e-6) == pytest.approx(invert_quantile(system_age_curve(single), 1e-6))
    assert invert_quantile(system_delay_curve(padded), 1e-6) == pytest.approx(invert_quantile(system_delay_curve(single), 1e-6))


def test_optimize_split_beats_rate_proportional_weights():
    system = SystemSpec(PoissonPackets(1.0, 0.6), (PoissonService(1.0), PoissonService(2.0)))
    p, q = optimize_split(system, 0.6, 1e-6, n_grid=21)
    proportional = invert_quantile(system_age_curve(system.with_weights((1 / 3, 2 / 3))), 1e-6)
    assert q <= proportional + 1e-6
    row = evaluate_point_enumerated(system, 0.6, 1e-6, n_grid=21)
    assert row.weight == p and row.age_quantile == pytest.approx(q)


def test_optimize_split_requires_two_poisson_subsystems():
    with pytest.raises(ParameterError):
        optimize_split(SystemSpec(PoissonPackets(1, 1), (PoissonService(2),)), 1.0, 1e-6)


def test_onoff_system_bound_is_finite():
    chain = onoff_transition(OnOffParams(0.9, 2 / 0.09, 1.0))
    system = SystemSpec(PoissonPackets(1.0, 2.0), (MarkovModulated(chain),))
    q = invert_quantile(system_age_curve(system), 1e-6)
    assert math.isfinite(q) and q > 2.0
