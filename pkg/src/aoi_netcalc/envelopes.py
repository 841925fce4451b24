"""Statistical envelopes (rate plus exponential profile) for arrivals and service.

An envelope pairs a rate with a profile ``eps(b) = alpha * exp(-theta * b)`` bounding the
probability that a sample path deviates from the rate by more than ``b``. Everything here
is a pure function of its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import lambertw

from .errors import EnvelopeInapplicableError, InfeasibleError, NumericError, ParameterError
from .models import (
    ConstantRate,
    MarkovChannelSpec,
    MarkovModulated,
    OnOffParams,
    PoissonService,
)

# below this value of theta * scale the closed forms lose digits to cancellation
SERIES_CUTOFF = 1e-8
POWER_TOL = 1e-12
POWER_MAX_ITER = 100_000


@dataclass(frozen=True)
class ExpProfile:
    """Exponential overflow/underflow profile ``prefactor * exp(-decay * b)``."""

    prefactor: float
    decay: float

    def __post_init__(self):
        if not (self.prefactor > 0 and math.isfinite(self.prefactor)):
            raise ParameterError(f"prefactor must be positive, got {self.prefactor!r}")
        if not (self.decay > 0 and math.isfinite(self.decay)):
            raise ParameterError(f"decay must be positive, got {self.decay!r}")

    def evaluate(self, b):
        return self.prefactor * np.exp(-self.decay * np.asarray(b, dtype=float))

    __call__ = evaluate

    def scaled(self, factor: float) -> "ExpProfile":
        """Profile of the rescaled argument, ``u -> eps(factor * u)``."""
        return ExpProfile(self.prefactor, self.decay * factor)


@dataclass(frozen=True)
class ServiceEnvelope:
    """Lower service envelope ``(rate, profile)``.

    ``profile`` is ``None`` for deterministic service (zero underflow probability).
    ``l_max`` is the packetizer shift added by :func:`apply_packetizer`.
    """

    rate: float
    profile: ExpProfile | None
    theta: float = math.nan
    l_max: float = 0.0


@dataclass(frozen=True)
class ArrivalEnvelope:
    """Upper arrival envelope ``(rate, overflow profile)``; ``profile=None`` means no overflow."""

    rate: float
    profile: ExpProfile | None
    theta: float = math.nan


@dataclass(frozen=True)
class LowerArrivalEnvelope:
    """Lower arrival envelope: at least ``l_min`` bits arrive after an idle time ``u`` except with probability ``profile(u)``."""

    l_min: float
    profile: ExpProfile


@dataclass(frozen=True)
class EnvelopeSet:
    """Everything the general age bound needs for one subsystem.

    ``service`` is used for the queueing term and ``service_idle`` (possibly with a
    different theta) for the idle-waiting term.
    """

    upper_arrival: ArrivalEnvelope
    lower_arrival: LowerArrivalEnvelope
    service: ServiceEnvelope
    service_idle: ServiceEnvelope | None = None

    @property
    def idle(self) -> ServiceEnvelope:
        return self.service if self.service_idle is None else self.service_idle


def _check_positive(**kw):
    for name, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise ParameterError(f"{name} must be positive and finite, got {v!r}")


# --------------------------------------------------------------------------- Poisson


def poisson_arrival_rate(l, w, theta):
    """Effective bandwidth ``(exp(theta l) - 1) / (theta w)`` of Poisson packet arrivals."""
    _check_positive(l=l, w=w, theta=theta)
    z = theta * l
    if z < SERIES_CUTOFF:
        return (l / w) * (1.0 + z / 2.0 + z * z / 6.0)
    return math.expm1(z) / (theta * w)


def poisson_arrival_rate_inverse(l, w, rate):
    """Largest theta with ``poisson_arrival_rate(l, w, theta) <= rate``.

    Solves ``exp(z) - 1 = k z`` with ``k = rate w / l`` through the lower Lambert-W branch
    and polishes with Newton steps. Works elementwise on arrays; entries with ``k <= 1``
    (rate not above the mean) are returned as ``nan``.
    """
    k = np.asarray(rate, dtype=float) * w / l
    out = np.full(k.shape, np.nan)
    ok = k > 1.0
    if np.any(ok):
        kk = k[ok]
        with np.errstate(over="ignore", invalid="ignore"):
            z = -lambertw(-np.exp(-1.0 / kk) / kk, -1).real - 1.0 / kk
            for _ in range(3):
                f = np.expm1(z) - kk * z
                fp = np.exp(z) - kk
                step = np.where(fp > 0, f / fp, 0.0)
                z = np.where(np.isfinite(step), z - step, z)
        # guard: never exceed the feasible set
        bad = np.expm1(z) > kk * z * (1 + 1e-13)
        z = np.where(bad, z * (1 - 1e-12), z)
        out[ok] = z / l
    return out if out.ndim else float(out)


def poisson_arrival_theta_for_rate(l, w, rate):
    """Scalar fast path of :func:`poisson_arrival_rate_inverse`."""
    k = rate * w / l
    if not k > 1.0:
        return math.nan
    z = -lambertw(-math.exp(-1.0 / k) / k, -1).real - 1.0 / k
    for _ in range(3):
        fp = math.exp(z) - k
        if fp <= 0:
            break
        z -= (math.expm1(z) - k * z) / fp
    if math.expm1(z) > k * z * (1 + 1e-13):
        z *= 1 - 1e-12
    return z / l


def poisson_arrival_profiles(l, w, theta):
    """Overflow profile ``exp(-theta b)`` and lower (idle) profile ``exp(-u / w)``."""
    _check_positive(l=l, w=w, theta=theta)
    return ExpProfile(1.0, theta), LowerArrivalEnvelope(l_min=l, profile=ExpProfile(1.0, 1.0 / w))


def poisson_arrival_envelope(l, w, theta) -> ArrivalEnvelope:
    over, _ = poisson_arrival_profiles(l, w, theta)
    return ArrivalEnvelope(poisson_arrival_rate(l, w, theta), over, theta)


def poisson_service_rate(r, theta):
    """Laplace envelope rate ``r (1 - exp(-theta)) / theta`` of a Poisson service process."""
    _check_positive(r=r, theta=theta)
    if theta < SERIES_CUTOFF:
        return r * (1.0 - theta / 2.0 + theta * theta / 6.0)
    return -r * math.expm1(-theta) / theta


# --------------------------------------------------------------------------- Markov channels


def onoff_transition(params: OnOffParams) -> MarkovChannelSpec:
    """Two-state chain (state 0 off with rate 0, state 1 on with rate ``capacity``).

    Solves ``p_on = p12 / (p12 + p21)`` and ``beta = 1/p12 + 1/p21``: with
    ``s = p12 + p21`` one gets ``beta = beta0 / s``, so ``p12 = p_on beta0 / beta`` and
    ``p21 = p_off beta0 / beta``.
    """
    beta0 = params.beta0
    if params.burstiness < beta0 * (1 - 1e-12):
        raise InfeasibleError(
            f"burstiness {params.burstiness!r} below the memoryless bound beta0={beta0!r}"
        )
    s = min(beta0 / params.burstiness, 1.0)
    p12 = params.p_on * s
    p21 = (1.0 - params.p_on) * s
    if not (0 < p12 <= 1 and 0 < p21 <= 1):
        raise InfeasibleError("transition probabilities outside (0, 1]")
    P = np.array([[1.0 - p12, p12], [p21, 1.0 - p21]])
    return MarkovChannelSpec(P, np.array([0.0, params.capacity]))


def _modulated(chain: MarkovChannelSpec, theta):
    return chain.transition * np.exp(-theta * chain.rates)[None, :]


def spectral_radius_2x2(M):
    """Perron root of a non-negative 2x2 matrix from the quadratic formula."""
    a, b, c, d = M[0, 0], M[0, 1], M[1, 0], M[1, 1]
    # (a - d)^2 + 4bc avoids the cancellation in tr^2 - 4 det
    disc = (a - d) ** 2 + 4.0 * b * c
    return 0.5 * (a + d + math.sqrt(max(disc, 0.0)))


def power_iteration(M, tol=POWER_TOL, max_iter=POWER_MAX_ITER):
    """Perron root and positive right eigenvector of an irreducible non-negative matrix.

    Stops when the Collatz-Wielandt bounds ``min_i (Mx)_i/x_i <= sp(M) <= max_i (Mx)_i/x_i``
    agree to ``tol`` relative. A shift ``M + s I`` is used so that periodic chains converge.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    x = np.ones(n)
    shift = 0.0
    for it in range(max_iter):
        if it == 1000:
            # not converging fast: make the matrix primitive with a shift of the current estimate
            shift = float(np.mean((M @ x) / x))
        y = M @ x + shift * x
        ratios = y / x
        lo, hi = ratios.min(), ratios.max()
        x = y / y.sum()
        if hi - lo <= tol * hi:
            lam = 0.5 * (lo + hi) - shift
            return lam, x / x.min()
    raise NumericError(f"power iteration did not converge in {max_iter} iterations")


def _perron(M):
    n = M.shape[0]
    if n == 2:
        lam = spectral_radius_2x2(M)
        a, b, c, d = M[0, 0], M[0, 1], M[1, 0], M[1, 1]
        # (M - lam I) h = 0; pick the better-conditioned row
        if abs(b) >= abs(c):
            h = np.array([b, lam - a]) if b > 0 else np.array([1.0, 0.0])
        else:
            h = np.array([lam - d, c])
        h = np.abs(h)
        if h.min() <= 0:
            # reducible corner case: fall back to the iterative solver
            return power_iteration(M)
        return lam, h / h.min()
    return power_iteration(M)


def markov_spectral_radius(chain: MarkovChannelSpec, theta, method="auto"):
    """``sp(P diag(exp(-theta r_i)))``; ``method`` is ``"auto"``, ``"closed"`` or ``"power"``."""
    M = _modulated(chain, theta)
    if method == "power" or (method == "auto" and chain.n_states != 2):
        return power_iteration(M)[0]
    if chain.n_states != 2:
        raise ParameterError("closed form only available for two states")
    return spectral_radius_2x2(M)


def markov_service_envelope(chain: MarkovChannelSpec, theta) -> ServiceEnvelope:
    """Martingale service envelope of a Markov-modulated channel.

    Rate ``-ln sp(P R(-theta)) / theta`` (bits per time after dividing by the slot) and
    profile prefactor ``E[h(y0)] / min{h(i) : rate > r_i}`` with ``h`` the Perron right
    eigenvector and ``y0`` drawn from the stationary distribution.
    """
    _check_positive(theta=theta)
    M = _modulated(chain, theta)
    lam, h = _perron(M)
    if not (lam > 0):
        raise NumericError("spectral radius is not positive")
    if theta * chain.rates.max() < SERIES_CUTOFF:
        # -ln(sp)/theta -> pi.r; first-order expansion avoids 0/0
        rho_slot = float(chain.stationary() @ chain.rates)
    else:
        rho_slot = -math.log(lam) / theta
    under = chain.rates < rho_slot
    if not np.any(under):
        raise EnvelopeInapplicableError(
            f"no state has rate below the envelope rate {rho_slot!r} at theta={theta!r}"
        )
    alpha = float(chain.stationary() @ h) / float(h[under].min())
    return ServiceEnvelope(rho_slot / chain.slot, ExpProfile(alpha, theta), theta)


def markov_service_envelopes(chain: MarkovChannelSpec, thetas):
    """Vectorised rates and prefactors on a theta grid (NaN where inapplicable)."""
    thetas = np.asarray(thetas, dtype=float)
    rates = np.full(thetas.shape, np.nan)
    alphas = np.full(thetas.shape, np.nan)
    for i, th in enumerate(thetas.flat):
        try:
            env = markov_service_envelope(chain, th)
        except EnvelopeInapplicableError:
            continue
        rates.flat[i] = env.rate
        alphas.flat[i] = env.profile.prefactor
    return rates, alphas


# --------------------------------------------------------------------------- dispatch


def service_envelope(model, theta) -> ServiceEnvelope:
    """Lower service envelope of any supported service model at ``theta``."""
    if isinstance(model, ConstantRate):
        return ServiceEnvelope(model.rate, None, theta)
    if isinstance(model, PoissonService):
        return ServiceEnvelope(poisson_service_rate(model.rate, theta), ExpProfile(1.0, theta), theta)
    if isinstance(model, MarkovModulated):
        return markov_service_envelope(model.chain, theta)
    raise ParameterError(f"unsupported service model {model!r}")


def apply_packetizer(envelope: ServiceEnvelope, l_max) -> ServiceEnvelope:
    """Account for packetized output: the service envelope loses ``l_max`` bits."""
    if l_max < 0:
        raise ParameterError("l_max must be non-negative")
    return replace(envelope, l_max=float(l_max))
