"""Closed-form tail bounds of the age-of-information and virtual delay.

The single-subsystem bounds take envelope parameters; the :class:`SubsystemAnalysis`
optimizer picks the free theta parameters for a given threshold ``x``; curves are then
inverted to quantiles and composed over independent parallel subsystems by the product
rule ``P[age > x] = prod_i P[age_i > x]``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .envelopes import (
    ArrivalEnvelope,
    EnvelopeSet,
    ExpProfile,
    LowerArrivalEnvelope,
    ServiceEnvelope,
    markov_service_envelope,
    markov_service_envelopes,
    poisson_arrival_rate_inverse,
    poisson_arrival_theta_for_rate,
    poisson_service_rate,
)
from .errors import (
    AoiError,
    DomainError,
    EnvelopeInapplicableError,
    InfeasibleError,
    ParameterError,
    UnboundedQuantileError,
)
from .models import (
    ConstantRate,
    MarkovModulated,
    Periodic,
    PoissonPackets,
    PoissonService,
    RandomWeighted,
    SystemSpec,
)

THETA_GRID = np.logspace(-4, 2, 200)
EQUAL_DECAY_RTOL = 1e-9
REFINE_TOL = 1e-6
QUANTILE_XTOL = 1e-6
QUANTILE_XMAX = 1e6
WEIGHT_GRID_POINTS = 101


def _clip01(p):
    return np.clip(p, 0.0, 1.0)


# --------------------------------------------------------------------------- Stieltjes convolution


def _exp_conv(alpha, v1, v2, y):
    """Array version of :func:`stieltjes_exp_conv`; returns 1 below the domain floor."""
    alpha, v1, v2, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (alpha, v1, v2, y)))
    out = np.ones(y.shape)
    with np.errstate(all="ignore"):
        log_a = np.log(alpha)
        floor = np.maximum(log_a, 0.0) / v1
        ok = np.isfinite(y) & np.isfinite(alpha) & np.isfinite(v1) & np.isfinite(v2) & (y >= floor)
        if not np.any(ok):
            return out
        a, u1, u2, x, la, L = (arr[ok] for arr in (alpha, v1, v2, y, log_a, floor))
        big = a > 1.0
        equal = np.abs(u1 - u2) <= EQUAL_DECAY_RTOL * np.maximum(u1, u2)
        val = np.empty(x.shape)

        # alpha <= 1, equal decay: (1 + a v x) e^{-v x}
        m = ~big & equal
        v = u1[m]
        val[m] = (1.0 + a[m] * v * x[m]) * np.exp(-v * x[m])
        # alpha > 1, equal decay: a (1 - ln a + v x) e^{-v x}
        m = big & equal
        v = u1[m]
        val[m] = a[m] * (1.0 - la[m] + v * x[m]) * np.exp(-v * x[m])

        # distinct decays. Both cases equal
        #   max(a,1)^{v2/v1} e^{-v2 x} + a v2 e^{-v1 x} (e^{d (x - L)} - 1) / d,  d = v1 - v2,
        # which is the textbook form rearranged so that d -> 0 does not cancel.
        m = ~equal
        a_, u1_, u2_, x_, L_ = a[m], u1[m], u2[m], x[m], L[m]
        d = u1_ - u2_
        t = d * (x_ - L_)
        head = np.where(a_ > 1.0, np.exp(u2_ / u1_ * np.log(np.maximum(a_, 1.0)) - u2_ * x_), np.exp(-u2_ * x_))
        tail = np.where(
            np.abs(t) < 1.0,
            np.exp(-u1_ * x_) * np.expm1(t),
            np.exp(-u1_ * x_ + t) - np.exp(-u1_ * x_),
        )
        val[m] = head + a_ * u2_ * tail / d
        out[ok] = val
    return _clip01(out)


def stieltjes_exp_conv(alpha, v1, v2, x):
    """``1 - [1 - eps1]_+ * (1 - eps2)(x)`` for ``eps1 = alpha e^{-v1 x}``, ``eps2 = e^{-v2 x}``.

    This is the tail ``P[Y1 + Y2 > x]`` of a sum of independent variables whose tails are
    bounded by the two profiles. Raises :class:`DomainError` for ``x < [ln alpha]_+ / v1``.
    """
    for name, v in (("alpha", alpha), ("v1", v1), ("v2", v2)):
        if not (v > 0 and math.isfinite(v)):
            raise ParameterError(f"{name} must be positive, got {v!r}")
    floor = max(math.log(alpha), 0.0) / v1
    if x < floor:
        raise DomainError(f"x={x!r} below the domain floor {floor!r}")
    return float(_exp_conv(alpha, v1, v2, x))


def _tail_of_sum(p1: ExpProfile | None, p2: ExpProfile | None, y):
    """``1 - [1-p1]_+ * [1-p2]_+ (y)`` for exponential profiles (``None`` = deterministic zero)."""
    y = np.asarray(y, dtype=float)
    if p1 is None and p2 is None:
        return np.where(y >= 0, 0.0, 1.0)
    if p1 is None or p2 is None:
        p = p1 if p2 is None else p2
        return np.where(y >= 0, _clip01(p.evaluate(np.maximum(y, 0.0))), 1.0)
    if p2.prefactor != 1.0:
        p1, p2 = p2, p1
    if p2.prefactor != 1.0:
        raise ParameterError("at most one profile may carry a prefactor other than 1")
    return _exp_conv(p1.prefactor, p1.decay, p2.decay, y)


# --------------------------------------------------------------------------- fixed-theta bounds


def age_bound_general(envelopes: EnvelopeSet, x, l_max=None):
    """General G|G|1 age bound for fixed envelope parameters.

    ``1 - [1-eps_A]_+ * [1-eps_S]_+ (rho_S x - l_max)
     + 1 - [1-eps_lowA]_+ * [1-eps_T]_+ (x - l_max / rho_S')`` with
    ``eps_T(u) = eps_S'(rho_S' u)``, truncated to [0, 1]. Below the validity floor
    ``x >= l_max / min(rho_S, rho_S')`` the result is 1.
    """
    svc, idle = envelopes.service, envelopes.idle
    if l_max is None:
        l_max = svc.l_max
    if envelopes.upper_arrival.rate > svc.rate * (1 + 1e-12):
        raise InfeasibleError(
            f"arrival envelope rate {envelopes.upper_arrival.rate!r} exceeds service rate {svc.rate!r}"
        )
    if x < l_max / min(svc.rate, idle.rate):
        return 1.0
    first = _tail_of_sum(envelopes.upper_arrival.profile, svc.profile, svc.rate * x - l_max)
    eps_t = None if idle.profile is None else idle.profile.scaled(idle.rate)
    second = _tail_of_sum(envelopes.lower_arrival.profile, eps_t, x - l_max / idle.rate)
    return float(_clip01(first + second))


def age_bound_constant_rate(upper: ArrivalEnvelope, lower: LowerArrivalEnvelope, r, l_max, x):
    """Age bound for constant-rate service: ``eps_A(r x - l_max) + eps_lowA(x - l_max / r)``."""
    if upper.rate > r * (1 + 1e-12):
        raise InfeasibleError(f"arrival envelope rate {upper.rate!r} exceeds service rate {r!r}")
    if x < l_max / r:
        return 1.0
    first = 0.0 if upper.profile is None else float(upper.profile.evaluate(r * x - l_max))
    return float(_clip01(first + float(lower.profile.evaluate(x - l_max / r))))


def age_bound_periodic(arrival: Periodic, service: ServiceEnvelope, service_idle: ServiceEnvelope, x, phase=0.0):
    """Age bound for periodic arrivals at a given arrival phase ``(t - x + o) mod w``.

    ``eps_S(rho_S (x - [l/rho_S - phase]_+) - l) + eps_S'(rho_S' (x - (w - phase)) - l)``.
    ``phase=0`` is the worst case over ``t``. Returns 1 below ``w + l / min(rho_S, rho_S')``.
    """
    l, w = arrival.length, arrival.period
    if l / w > service.rate * (1 + 1e-12):
        raise InfeasibleError(f"periodic load {l / w!r} exceeds service rate {service.rate!r}")
    phase = phase % w
    if x < w + l / min(service.rate, service_idle.rate):
        return 1.0
    b1 = service.rate * (x - max(l / service.rate - phase, 0.0)) - l
    b2 = service_idle.rate * (x - (w - phase)) - l
    first = 0.0 if service.profile is None else float(service.profile.evaluate(b1))
    second = 0.0 if service_idle.profile is None else float(service_idle.profile.evaluate(b2))
    return float(_clip01(first + second))


def delay_bound(upper: ArrivalEnvelope, service: ServiceEnvelope, x):
    """Virtual-delay bound ``1 - [1-eps_A]_+ * [1-eps_S]_+ (rho_S x)`` (no packetizer shift)."""
    if upper.rate > service.rate * (1 + 1e-12):
        raise InfeasibleError("arrival envelope rate exceeds service rate")
    return float(_tail_of_sum(upper.profile, service.profile, service.rate * x))


# --------------------------------------------------------------------------- theta optimization


@dataclass(frozen=True)
class ThetaStar:
    """Optimizing parameters: arrival theta, queueing-term service theta, idle-term service theta."""

    theta_a: float = math.nan
    theta_s: float = math.nan
    theta_t: float = math.nan

    def __post_init__(self):
        for name in ("theta_a", "theta_s", "theta_t"):
            object.__setattr__(self, name, float(getattr(self, name)))


@lru_cache(maxsize=256)
def _service_grid(service, grid_key):
    """Envelope rates and prefactors of ``service`` on the theta grid (NaN = inapplicable)."""
    thetas = np.asarray(grid_key)
    if isinstance(service, PoissonService):
        rates = service.rate * -np.expm1(-thetas) / thetas
        alphas = np.ones_like(thetas)
    elif isinstance(service, MarkovModulated):
        rates, alphas = markov_service_envelopes(service.chain, thetas)
    else:
        raise ParameterError(f"no theta grid for {service!r}")
    rates.setflags(write=False)
    alphas.setflags(write=False)
    return rates, alphas


def _service_point(service, theta):
    if isinstance(service, PoissonService):
        return poisson_service_rate(service.rate, theta), 1.0
    try:
        env = markov_service_envelope(service.chain, theta)
    except EnvelopeInapplicableError:
        return math.nan, math.nan
    return env.rate, env.profile.prefactor


def _exp_conv_scalar(a, v1, v2, y):
    """Scalar twin of :func:`_exp_conv` for the refinement loop."""
    if not (math.isfinite(a) and math.isfinite(v1) and math.isfinite(v2) and math.isfinite(y)):
        return 1.0
    la = math.log(a)
    L = max(la, 0.0) / v1
    if y < L:
        return 1.0
    if abs(v1 - v2) <= EQUAL_DECAY_RTOL * max(v1, v2):
        if a <= 1.0:
            val = (1.0 + a * v1 * y) * math.exp(-v1 * y)
        else:
            val = a * (1.0 - la + v1 * y) * math.exp(-v1 * y)
    else:
        d = v1 - v2
        t = d * (y - L)
        head = math.exp(v2 / v1 * max(la, 0.0) - v2 * y)
        if abs(t) < 1.0:
            tail = math.exp(-v1 * y) * math.expm1(t)
        else:
            tail = math.exp(-v1 * y + t) - math.exp(-v1 * y)
        val = head + a * v2 * tail / d
    return min(max(val, 0.0), 1.0)


class _Term:
    """One separable term of a bound: vectorised over a theta grid plus a scalar twin."""

    def __init__(self, vec, scalar):
        self.vec = vec
        self.scalar = scalar


def _minimize_term(term: _Term, grid, rates, alphas, service):
    """Minimize a term over the log theta grid, then golden-section refine around the best point.

    Returns ``(value, theta)``; ``theta`` is NaN when no grid point gives a value below 1.
    """
    vals = term.vec(grid, rates, alphas)
    vals = np.where(np.isfinite(vals), vals, np.inf)
    i = int(np.argmin(vals))
    best, best_theta = float(vals[i]), float(grid[i])
    if not best < 1.0:
        return min(best, 1.0), math.nan
    if 0 < i < len(grid) - 1 and vals[i] < vals[i - 1] and vals[i] < vals[i + 1]:

        def f(log_theta):
            th = math.exp(log_theta)
            r, a = _service_point(service, th)
            if not math.isfinite(r):
                return math.inf
            return term.scalar(th, r, a)

        lo, mid, hi = math.log(grid[i - 1]), math.log(grid[i]), math.log(grid[i + 1])
        res = minimize_scalar(f, bracket=(lo, mid, hi), method="golden", tol=REFINE_TOL)
        if math.isfinite(res.fun) and res.fun < best:
            best, best_theta = float(res.fun), float(math.exp(res.x))
    return best, best_theta


class SubsystemAnalysis:
    """Optimized age and delay bounds of one (arrival, service) pair.

    Dispatches to the general bound (Poisson arrivals, random service), the
    constant-rate bound, or the periodic-arrival bound. For the queueing term
    the arrival theta is tied to the service theta: the bound decreases in ``theta_A``, so
    the best feasible choice is the largest ``theta_A`` with ``rho_A(theta_A) <= rho_S``.
    """

    def __init__(self, arrival, service, theta_grid=THETA_GRID):
        if not isinstance(arrival, (PoissonPackets, Periodic)):
            raise ParameterError(f"unsupported arrival model {arrival!r}")
        self.arrival = arrival
        self.service = service
        self.l = arrival.length
        self.w = arrival.interval
        self.grid = np.asarray(theta_grid, dtype=float)
        if arrival.mean_rate >= service.mean_rate * (1 - 1e-12):
            raise InfeasibleError(
                f"mean arrival rate {arrival.mean_rate!r} >= mean service rate {service.mean_rate!r}"
            )
        self.deterministic = isinstance(service, ConstantRate)
        if self.deterministic:
            self.rates = self.alphas = None
        else:
            self.rates, self.alphas = _service_grid(service, tuple(self.grid))

    @property
    def validity_floor(self) -> float:
        # the envelope rate never exceeds the mean service rate
        rate = self.service.mean_rate
        if isinstance(self.arrival, Periodic):
            return self.w + self.l / rate
        return self.l / rate

    def _minimize(self, term):
        return _minimize_term(term, self.grid, self.rates, self.alphas, self.service)

    # -- Poisson arrivals -----------------------------------------------------------
    def _queue_term(self, x, l_max):
        l, w = self.l, self.w

        def vec(th, r, a):
            th_a = poisson_arrival_rate_inverse(l, w, r)
            with np.errstate(all="ignore"):
                # service profile carries the prefactor, the arrival profile has prefactor 1
                v = _exp_conv(a, th, th_a, r * x - l_max)
                return np.where(np.isfinite(th_a) & (x >= l_max / r), v, 1.0)

        def scalar(th, r, a):
            th_a = poisson_arrival_theta_for_rate(l, w, r)
            if not math.isfinite(th_a) or x < l_max / r:
                return 1.0
            return _exp_conv_scalar(a, th, th_a, r * x - l_max)

        return _Term(vec, scalar)

    def _idle_term(self, x):
        l, w = self.l, self.w

        def vec(th, r, a):
            with np.errstate(all="ignore"):
                v = _exp_conv(a, th * r, 1.0 / w, x - l / r)
                return np.where(x >= l / r, v, 1.0)

        def scalar(th, r, a):
            if x < l / r:
                return 1.0
            return _exp_conv_scalar(a, th * r, 1.0 / w, x - l / r)

        return _Term(vec, scalar)

    def _theta_a_for(self, theta_s):
        if not math.isfinite(theta_s):
            return math.nan
        return poisson_arrival_theta_for_rate(self.l, self.w, _service_point(self.service, theta_s)[0])

    def _poisson_age(self, x):
        l, w = self.l, self.w
        if self.deterministic:
            r = self.service.rate
            th_a = poisson_arrival_theta_for_rate(l, w, r)
            if x < l / r:
                return 1.0, ThetaStar(th_a)
            p = math.exp(-th_a * (r * x - l)) + math.exp(-(x - l / r) / w)
            return min(p, 1.0), ThetaStar(th_a)
        p1, th_s = self._minimize(self._queue_term(x, l))
        p2, th_t = self._minimize(self._idle_term(x))
        return min(p1 + p2, 1.0), ThetaStar(self._theta_a_for(th_s), th_s, th_t)

    def _poisson_delay(self, x):
        if self.deterministic:
            r = self.service.rate
            th_a = poisson_arrival_theta_for_rate(self.l, self.w, r)
            return min(math.exp(-th_a * r * x), 1.0), ThetaStar(th_a)
        p, th_s = self._minimize(self._queue_term(x, 0.0))
        return p, ThetaStar(self._theta_a_for(th_s), th_s)

    # -- periodic arrivals ----------------------------------------------------------
    def _periodic_terms(self, x, phase):
        l, w = self.l, self.w
        phase = phase % w

        def vec1(th, r, a):
            with np.errstate(all="ignore"):
                b = r * (x - np.maximum(l / r - phase, 0.0)) - l
                ok = (r >= l / w) & (x >= w + l / r)
                return np.where(ok, _clip01(a * np.exp(-th * b)), 1.0)

        def scalar1(th, r, a):
            if r < l / w or x < w + l / r:
                return 1.0
            b = r * (x - max(l / r - phase, 0.0)) - l
            return min(a * math.exp(-th * b), 1.0)

        def vec2(th, r, a):
            with np.errstate(all="ignore"):
                b = r * (x - (w - phase)) - l
                return np.where(x >= w + l / r, _clip01(a * np.exp(-th * b)), 1.0)

        def scalar2(th, r, a):
            if x < w + l / r:
                return 1.0
            return min(a * math.exp(-th * (r * (x - (w - phase)) - l)), 1.0)

        return _Term(vec1, scalar1), _Term(vec2, scalar2)

    def _periodic_age(self, x, phase=0.0):
        if self.deterministic:
            env = ServiceEnvelope(self.service.rate, None)
            return age_bound_periodic(self.arrival, env, env, x, phase), ThetaStar()
        first, second = self._periodic_terms(x, phase)
        p1, th_s = self._minimize(first)
        p2, th_t = self._minimize(second)
        return min(p1 + p2, 1.0), ThetaStar(math.nan, th_s, th_t)

    def _periodic_delay(self, x):
        # A(s, t) <= l + (l / w)(t - s) on every path, so P[V > x] <= eps_S(rho_S x - l)
        l, w = self.l, self.w
        if self.deterministic:
            return (0.0 if self.service.rate * x >= l else 1.0), ThetaStar()

        def vec(th, r, a):
            with np.errstate(all="ignore"):
                b = r * x - l
                v = np.where(b >= 0, _clip01(a * np.exp(-th * b)), 1.0)
                return np.where(r >= l / w, v, 1.0)

        def scalar(th, r, a):
            b = r * x - l
            if b < 0 or r < l / w:
                return 1.0
            return min(a * math.exp(-th * b), 1.0)

        p, th_s = self._minimize(_Term(vec, scalar))
        return p, ThetaStar(math.nan, th_s)

    # -- public ---------------------------------------------------------------------
    def age(self, x, phase=0.0):
        """Optimized age bound at ``x``; returns ``(probability, ThetaStar)``."""
        if isinstance(self.arrival, Periodic):
            return self._periodic_age(x, phase)
        return self._poisson_age(x)

    def delay(self, x):
        if isinstance(self.arrival, Periodic):
            return self._periodic_delay(x)
        return self._poisson_delay(x)

    def age_curve(self, phase=0.0) -> "BoundCurve":
        return BoundCurve(lambda x: self.age(x, phase), self.validity_floor)

    def delay_curve(self) -> "BoundCurve":
        return BoundCurve(self.delay, 0.0)


def optimize_theta(arrival, service, x):
    """Best ``(theta_A, theta_S, theta_T, bound)`` for one subsystem at threshold ``x``."""
    p, th = SubsystemAnalysis(arrival, service).age(x)
    return th.theta_a, th.theta_s, th.theta_t, p


# --------------------------------------------------------------------------- curves


class BoundCurve:
    """CCDF upper bound ``x -> P[. > x]`` with the optimizing thetas recorded.

    ``fn`` maps ``x`` to ``(probability, ThetaStar)``. Values are truncated to [0, 1] and
    are 1 below ``validity_floor``.
    """

    def __init__(self, fn: Callable, validity_floor: float = 0.0):
        self._fn = fn
        self.validity_floor = float(validity_floor)

    def evaluate_with_theta(self, x):
        if x < self.validity_floor:
            return 1.0, ThetaStar()
        p, th = self._fn(x)
        return float(min(max(p, 0.0), 1.0)), th

    def evaluate(self, x) -> float:
        return self.evaluate_with_theta(x)[0]

    __call__ = evaluate

    def theta_star(self, x) -> ThetaStar:
        return self.evaluate_with_theta(x)[1]

    def scaled(self, factor) -> "BoundCurve":
        """Curve multiplied by ``factor`` (used by the CLI self-test hook)."""
        return BoundCurve(lambda x: (factor * self._fn(x)[0], self._fn(x)[1]), self.validity_floor)

    @classmethod
    def from_function(cls, f, validity_floor=0.0):
        return cls(lambda x: (f(x), ThetaStar()), validity_floor)


def invert_quantile(curve: BoundCurve, eps, x_max=QUANTILE_XMAX, xtol=QUANTILE_XTOL):
    """Smallest ``x >= validity_floor`` with ``curve(x) <= eps`` (bisection after doubling)."""
    if not (0.0 < eps < 1.0):
        raise ParameterError(f"eps must lie in (0, 1), got {eps!r}")
    lo = curve.validity_floor
    if curve(lo) <= eps:
        return lo
    step = max(1.0, lo)
    hi = lo + step
    while curve(hi) > eps:
        lo = hi
        step *= 2.0
        hi = curve.validity_floor + step
        if hi > x_max:
            raise UnboundedQuantileError(f"bound stays above {eps!r} up to x={x_max!r}")
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if curve(mid) <= eps:
            hi = mid
        else:
            lo = mid
    return hi


def parallel_ccdf(curves, x) -> float:
    """Product of independent per-subsystem bounds at ``x``."""
    p = 1.0
    for c in curves:
        p *= min(max(c(x), 0.0), 1.0)
    return p


def product_curve(curves) -> BoundCurve:
    curves = list(curves)

    def fn(x):
        return parallel_ccdf(curves, x), curves[0].theta_star(x)

    return BoundCurve(fn, min(c.validity_floor for c in curves))


def mixture_curve(curves, weights) -> BoundCurve:
    """Per-packet view of the delay of a split stream: ``sum_i p_i P[V_i > x]``."""
    pairs = [(c, p) for c, p in zip(curves, weights) if p > 0]

    def fn(x):
        return sum(p * c(x) for c, p in pairs), pairs[0][0].theta_star(x)

    return BoundCurve(fn, 0.0)


# --------------------------------------------------------------------------- systems


def _check_stable(system: SystemSpec):
    for a, s in zip(system.subsystem_arrivals(), system.servers):
        if a is not None and a.mean_rate >= s.mean_rate:
            raise InfeasibleError(
                f"subsystem load {a.mean_rate!r} >= service rate {s.mean_rate!r}"
            )


def _analyses(system: SystemSpec):
    _check_stable(system)
    return [
        None if a is None else SubsystemAnalysis(a, s)
        for a, s in zip(system.subsystem_arrivals(), system.servers)
    ]


def system_age_curve(system: SystemSpec) -> BoundCurve:
    """Age bound curve of a (possibly parallel) system."""
    analyses = _analyses(system)
    live = [an for an in analyses if an is not None]
    if isinstance(system.arrivals, Periodic) and system.k > 1:
        return _round_robin_curve(analyses, system.arrivals.period)
    return product_curve([an.age_curve() for an in live])


def _round_robin_curve(analyses, w):
    """Worst-case ``t`` of the product of phase-aware periodic bounds.

    Subsystem ``i`` has offset ``i w`` in a period ``k w``. Each per-subsystem bound is
    non-increasing in its phase, so the product is maximized where some subsystem sits at
    phase 0: the ``k`` candidates give relative phases ``((i - j) mod k) w``.
    """
    k = len(analyses)

    def fn(x):
        best, best_th = -1.0, ThetaStar()
        for j in range(k):
            p, th0 = 1.0, None
            for i, an in enumerate(analyses):
                q, th = an.age(x, ((i - j) % k) * w)
                p *= q
                if i == 0:
                    th0 = th
            if p > best:
                best, best_th = p, th0
        return best, best_th

    floor = min(an.validity_floor for an in analyses)
    return BoundCurve(fn, floor)


def system_delay_curve(system: SystemSpec) -> BoundCurve:
    analyses = _analyses(system)
    if system.k == 1:
        return analyses[0].delay_curve()
    if isinstance(system.splitting, RandomWeighted):
        weights = system.splitting.weights
    else:
        weights = [1.0 / system.k] * system.k
    curves = [an.delay_curve() if an is not None else None for an in analyses]
    return mixture_curve([c for c in curves if c is not None], [p for c, p in zip(curves, weights) if c is not None])


@dataclass
class SweepRow:
    w: float
    age_quantile: float = math.nan
    delay_quantile: float = math.nan
    theta_a: float = math.nan
    theta_s: float = math.nan
    theta_t: float = math.nan
    stable: bool = False
    weight: float = math.nan
    error: str = ""


def evaluate_point(system: SystemSpec, w, eps, bound_scale=1.0) -> SweepRow:
    """Age and delay bound quantiles of ``system`` at update interval ``w``."""
    row = SweepRow(w=float(w))
    try:
        s = system.with_interval(w)
        age = system_age_curve(s)
        if bound_scale != 1.0:
            age = age.scaled(bound_scale)
        row.age_quantile = invert_quantile(age, eps)
        th = age.theta_star(row.age_quantile)
        row.theta_a, row.theta_s, row.theta_t = th.theta_a, th.theta_s, th.theta_t
        row.delay_quantile = invert_quantile(system_delay_curve(s), eps)
        row.stable = True
    except (InfeasibleError, UnboundedQuantileError) as exc:
        row.error = str(exc)
        row.age_quantile = row.delay_quantile = math.nan
    return row


def _evaluate_args(args):
    return evaluate_point(*args)


def sweep(system: SystemSpec, w_grid, eps, jobs=1, bound_scale=1.0):
    """Bound quantiles over a grid of update intervals; unstable points are flagged, not dropped."""
    system.check_analytical()
    args = [(system, float(w), eps, bound_scale) for w in w_grid]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_evaluate_args, args))
    return [_evaluate_args(a) for a in args]


def optimize_split(system: SystemSpec, w, eps, n_grid=WEIGHT_GRID_POINTS):
    """Best random-splitting weight for two subsystems by enumeration.

    Returns ``(weight_of_first, quantile)``; weights leaving a loaded subsystem unstable
    are skipped, an unloaded subsystem contributes the trivial factor 1.
    """
    if system.k != 2 or not isinstance(system.arrivals, PoissonPackets):
        raise ParameterError("weight enumeration supports two subsystems with Poisson arrivals")
    best = (math.nan, math.inf)
    for p in np.linspace(0.0, 1.0, n_grid):
        s = system.with_interval(w).with_weights((float(p), float(1.0 - p)))
        try:
            q = invert_quantile(system_age_curve(s), eps)
        except (InfeasibleError, UnboundedQuantileError):
            continue
        if q < best[1]:
            best = (float(p), q)
    if not math.isfinite(best[1]):
        raise InfeasibleError(f"no stable splitting weight at w={w!r}")
    return best


def evaluate_point_enumerated(system: SystemSpec, w, eps, n_grid=WEIGHT_GRID_POINTS, bound_scale=1.0) -> SweepRow:
    try:
        p, _ = optimize_split(system, w, eps, n_grid)
    except InfeasibleError as exc:
        return SweepRow(w=float(w), error=str(exc))
    row = evaluate_point(system.with_weights((p, 1.0 - p)), w, eps, bound_scale)
    row.weight = p
    return row
