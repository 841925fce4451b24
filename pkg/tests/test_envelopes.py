import math

import numpy as np
import pytest

from aoi_netcalc.envelopes import (
    ExpProfile,
    ServiceEnvelope,
    apply_packetizer,
    markov_service_envelope,
    markov_spectral_radius,
    onoff_transition,
    poisson_arrival_profiles,
    poisson_arrival_rate,
    poisson_arrival_rate_inverse,
    poisson_service_rate,
    power_iteration,
    spectral_radius_2x2,
)
from aoi_netcalc.errors import EnvelopeInapplicableError, InfeasibleError, ParameterError
from aoi_netcalc.models import MarkovChannelSpec, MarkovModulated, OnOffParams
from aoi_netcalc.sim import ServicePath, make_rng
from oracles import mc_arrival_rate, mc_service_rate


# --------------------------------------------------------------------------- Poisson envelopes


def test_arrival_rate_limit_is_mean_rate():
    assert poisson_arrival_rate(1.0, 1.0, 1e-14) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("l,w,theta,expected", [(1, 1, 1.0, math.e - 1), (2, 4, 0.5, (math.e - 1) / 2)])
def test_arrival_rate_closed_form(l, w, theta, expected):
    assert poisson_arrival_rate(l, w, theta) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("l,w,theta", [(1, 1, 1.0), (2, 4, 0.5)])
def test_arrival_rate_matches_monte_carlo_mgf(l, w, theta):
    est = mc_arrival_rate(l, w, theta, 10_000_000, seed=31)
    assert poisson_arrival_rate(l, w, theta) == pytest.approx(est, rel=2e-3)


def test_arrival_rate_rejects_bad_input():
    with pytest.raises(ParameterError):
        poisson_arrival_rate(0.0, 1.0, 1.0)
    with pytest.raises(ParameterError):
        poisson_arrival_rate(1.0, 1.0, -1.0)


def test_arrival_rate_inverse_round_trip():
    for th in (1e-3, 0.1, 1.0, 3.0):
        rho = poisson_arrival_rate(1.5, 2.0, th)
        assert float(poisson_arrival_rate_inverse(1.5, 2.0, rho)) == pytest.approx(th, rel=1e-9)
    assert math.isnan(float(poisson_arrival_rate_inverse(1.0, 1.0, 0.5)))


def test_arrival_profiles():
    over, under = poisson_arrival_profiles(1.0, 2.0, 2.0)
    assert float(over.evaluate(3.0)) == pytest.approx(math.exp(-6.0))
    assert float(under.profile(2.0)) == pytest.approx(math.exp(-1.0))
    _, under1 = poisson_arrival_profiles(1.0, 1.0, 1.0)
    assert float(under1.profile(0.0)) == 1.0 and under1.l_min == 1.0


@pytest.mark.parametrize("r,theta,expected", [(1, 1.0, 1 - math.exp(-1)), (4, 2.0, 2 * (1 - math.exp(-2)))])
def test_service_rate_closed_form_and_monte_carlo(r, theta, expected):
    assert poisson_service_rate(r, theta) == pytest.approx(expected, rel=1e-12)
    assert poisson_service_rate(r, theta) == pytest.approx(mc_service_rate(r, theta, 10_000_000, 5), rel=2e-3)


def test_service_rate_limit():
    assert poisson_service_rate(2.0, 1e-14) == pytest.approx(2.0, abs=1e-12)


def test_exp_profile_shape():
    p = ExpProfile(2.0, 0.5)
    b = np.linspace(0, 10, 50)
    v = p(b)
    assert np.all(np.diff(v) < 0) and np.all(v > 0)
    with pytest.raises(ParameterError):
        ExpProfile(0.0, 1.0)
    with pytest.raises(ParameterError):
        ExpProfile(1.0, 0.0)


# --------------------------------------------------------------------------- on-off and Markov


@pytest.mark.parametrize(
    "p_on,ratio,p12,p21",
    [(0.9, 1.0, 0.9, 0.1), (0.9, 2.0, 0.45, 0.05), (0.5, 1.0, 0.5, 0.5)],
)
def test_onoff_transition(p_on, ratio, p12, p21):
    beta0 = 1 / (p_on * (1 - p_on))
    chain = onoff_transition(OnOffParams(p_on, ratio * beta0, 1.0))
    P = chain.transition
    assert P[0, 1] == pytest.approx(p12, rel=1e-12)
    assert P[1, 0] == pytest.approx(p21, rel=1e-12)
    # recompute the defining quantities
    assert P[0, 1] / (P[0, 1] + P[1, 0]) == pytest.approx(p_on, rel=1e-12)
    assert 1 / P[0, 1] + 1 / P[1, 0] == pytest.approx(ratio * beta0, rel=1e-12)
    assert list(chain.rates) == [0.0, 1.0]


def test_onoff_rejects_low_burstiness():
    with pytest.raises(InfeasibleError):
        onoff_transition(OnOffParams(0.9, 5.0, 1.0))


def test_chain_validation():
    with pytest.raises(ParameterError):
        MarkovChannelSpec([[0.5, 0.6], [0.5, 0.5]], [0, 1])
    with pytest.raises(ParameterError):
        MarkovChannelSpec([[1.0, 0.0], [0.5, 0.5]], [0, 1])  # state 0 absorbing
    with pytest.raises(ParameterError):
        MarkovChannelSpec([[0.5, 0.5], [0.5, 0.5]], [0, 0])


def test_markov_rate_limit_is_stationary_mean():
    chain = onoff_transition(OnOffParams(0.9, 1 / 0.09, 1.0))
    assert markov_service_envelope(chain, 1e-13).rate == pytest.approx(0.9, abs=1e-9)


def test_markov_closed_form_vs_power_iteration():
    chain = onoff_transition(OnOffParams(0.9, 2 / 0.09, 2.0))
    a = markov_spectral_radius(chain, 0.1, method="closed")
    b = markov_spectral_radius(chain, 0.1, method="power")
    assert a == pytest.approx(b, rel=1e-10)
    M = chain.transition * np.exp(-0.1 * chain.rates)[None, :]
    assert spectral_radius_2x2(M) == pytest.approx(max(abs(np.linalg.eigvals(M))), rel=1e-12)
    lam, h = power_iteration(M)
    assert np.allclose(M @ h, lam * h, rtol=1e-10)
    assert h.min() == pytest.approx(1.0)


def test_markov_envelope_inapplicable_when_no_state_below_rate():
    # equal rates give rho_S = 1 exactly, so no state lies strictly below it
    chain = MarkovChannelSpec([[0.5, 0.5], [0.5, 0.5]], [1.0, 1.0])
    with pytest.raises(EnvelopeInapplicableError):
        markov_service_envelope(chain, 0.5)


def test_three_state_chain_uses_power_iteration():
    chain = MarkovChannelSpec([[0.8, 0.15, 0.05], [0.1, 0.7, 0.2], [0.3, 0.3, 0.4]], [0.0, 1.0, 3.0])
    th = 0.4
    M = chain.transition * np.exp(-th * chain.rates)[None, :]
    env = markov_service_envelope(chain, th)
    assert env.rate == pytest.approx(-math.log(max(abs(np.linalg.eigvals(M)))) / th, rel=1e-10)


def test_memoryless_prefactor_is_one_and_onoff_prefactor_at_most_one():
    memoryless = onoff_transition(OnOffParams(0.9, 1 / 0.09, 1.0))
    bursty = onoff_transition(OnOffParams(0.9, 2 / 0.09, 1 / 0.9))
    for th in (0.05, 0.5, 2.0):
        assert markov_service_envelope(memoryless, th).profile.prefactor == pytest.approx(1.0, rel=1e-10)
        a = markov_service_envelope(bursty, th).profile.prefactor
        assert 0.0 < a <= 1.0


def _sup_deficit(chain, rho, T, n_paths, seed):
    """``max_tau rho (T - tau) - S(tau, T)`` on simulated slot paths (slot boundaries suffice)."""
    rng = make_rng(seed)
    out = np.empty(n_paths)
    tau = np.arange(T + 1)
    for k in range(n_paths):
        path = ServicePath(MarkovModulated(chain), rng)
        path.extend(T)
        S = path.data[: T + 1]
        out[k] = np.max(rho * (T - tau) - (S[T] - S))
    return out


@pytest.mark.parametrize("ratio", [1.0, 2.0])
def test_markov_envelope_holds_on_sample_paths(ratio):
    chain = onoff_transition(OnOffParams(0.9, ratio / 0.09, 1 / 0.9))
    n = 800
    for th in (0.3, 1.0):
        env = markov_service_envelope(chain, th)
        deficit = _sup_deficit(chain, env.rate, 10_000, n, seed=int(10 * th + ratio))
        for b in np.linspace(0.0, 8.0, 9):
            e = float(env.profile(b))
            if not (1e-3 <= e <= 1.0):
                continue
            frac = float(np.mean(deficit > b))
            assert frac <= e + 3.0 * math.sqrt(e * (1 - e) / n) + 1e-12


def test_poisson_service_envelope_holds_on_sample_paths():
    r, th, T, n = 1.0, 0.7, 2000.0, 800
    rho = poisson_service_rate(r, th)
    rng = make_rng(3)
    deficit = np.empty(n)
    for k in range(n):
        pts = np.cumsum(rng.exponential(1 / r, size=int(3 * r * T)))
        pts = pts[pts <= T]
        # candidates tau = 0 and tau at each point (right limit excludes that point)
        taus = np.concatenate([[0.0], pts])
        served = len(pts) - np.concatenate([[0], np.arange(1, len(pts) + 1)])
        deficit[k] = np.max(rho * (T - taus) - served)
    for b in np.linspace(0.0, 8.0, 9):
        e = math.exp(-th * b)
        if e < 1e-3:
            continue
        assert np.mean(deficit > b) <= e + 3.0 * math.sqrt(e * (1 - e) / n) + 1e-12


def test_apply_packetizer_tags_shift():
    env = apply_packetizer(ServiceEnvelope(2.0, ExpProfile(1.0, 1.0), 1.0), 1.0)
    assert env.l_max == 1.0 and env.rate == 2.0
    # first-term argument rho x - l_max at x = 1
    assert env.rate * 1.0 - env.l_max == 1.0
