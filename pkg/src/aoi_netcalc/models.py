"""Declarative descriptions of update traffic, channels and parallel systems.

These are plain immutable values. Both the bound engine (:mod:`aoi_netcalc.bounds`)
and the simulator (:mod:`aoi_netcalc.sim`) consume them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ParameterError, SimulationOnlyError

ROW_SUM_TOL = 1e-12


def _positive(name, value):
    if not (isinstance(value, (int, float, np.floating, np.integer)) and math.isfinite(value) and value > 0):
        raise ParameterError(f"{name} must be a positive finite number, got {value!r}")
    return float(value)


# --------------------------------------------------------------------------- arrivals


@dataclass(frozen=True)
class PoissonPackets:
    """Poisson packet arrivals with constant packet length.

    :param length: packet length ``l`` in bits
    :param mean_interarrival: mean inter-arrival time ``w``
    """

    length: float
    mean_interarrival: float

    def __post_init__(self):
        object.__setattr__(self, "length", _positive("length", self.length))
        object.__setattr__(self, "mean_interarrival", _positive("mean_interarrival", self.mean_interarrival))

    @property
    def interval(self) -> float:
        return self.mean_interarrival

    @property
    def mean_rate(self) -> float:
        """Mean arrival rate in bits per unit time."""
        return self.length / self.mean_interarrival

    def with_interval(self, w: float) -> "PoissonPackets":
        return replace(self, mean_interarrival=w)


@dataclass(frozen=True)
class Periodic:
    """Periodic arrivals of ``length`` bits every ``period`` time units.

    The simulator places packets at ``offset + k * period`` for ``k = 1, 2, ...`` (never at
    ``t = 0``). The bounds only use the offset through the relative phases of round-robin
    subsystems, which form the same set ``{0, w, ..., (k-1) w}`` under either sign convention.
    """

    length: float
    period: float
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "length", _positive("length", self.length))
        object.__setattr__(self, "period", _positive("period", self.period))
        o = float(self.offset)
        if not (0.0 <= o < self.period):
            raise ParameterError(f"offset must lie in [0, period), got {o!r}")
        object.__setattr__(self, "offset", o)

    @property
    def interval(self) -> float:
        return self.period

    @property
    def mean_rate(self) -> float:
        return self.length / self.period

    def with_interval(self, w: float) -> "Periodic":
        return replace(self, period=w, offset=self.offset % w if self.offset else 0.0)


ArrivalModel = Union[PoissonPackets, Periodic]


# --------------------------------------------------------------------------- channels


@dataclass(frozen=True, eq=False)
class MarkovChannelSpec:
    """Discrete-time Markov-modulated channel.

    ``transition[i, j]`` is the probability of moving from state ``i`` to ``j`` in one
    slot, ``rates[i]`` the number of bits served per slot in state ``i`` and ``slot`` the
    slot duration in time units.
    """

    transition: np.ndarray
    rates: np.ndarray
    slot: float = 1.0

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.rates, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ParameterError("transition must be a square matrix")
        if r.shape != (P.shape[0],):
            raise ParameterError("rates must have one entry per state")
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise ParameterError("transition probabilities must be finite and non-negative")
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise ParameterError("each row of the transition matrix must sum to 1")
        if np.any(r < 0) or not np.any(r > 0) or not np.all(np.isfinite(r)):
            raise ParameterError("rates must be non-negative with at least one positive entry")
        n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
        if n_comp != 1:
            raise ParameterError("Markov chain must be irreducible")
        _positive("slot", self.slot)
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "rates", r)
        object.__setattr__(self, "slot", float(self.slot))
        object.__setattr__(self, "_pi", self._solve_stationary())

    @property
    def n_states(self) -> int:
        return len(self.rates)

    def _solve_stationary(self):
        n = self.n_states
        A = self.transition.T - np.eye(n)
        A[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        pi = np.clip(np.linalg.solve(A, b), 0.0, None)
        pi = pi / pi.sum()
        pi.setflags(write=False)
        return pi

    def stationary(self) -> np.ndarray:
        """Stationary distribution, solving ``pi P = pi`` with ``sum(pi) = 1``."""
        return self._pi

    @property
    def mean_rate(self) -> float:
        """Stationary mean service rate in bits per unit time."""
        return float(self.stationary() @ self.rates) / self.slot

    def __eq__(self, other):
        if not isinstance(other, MarkovChannelSpec):
            return NotImplemented
        return (
            self.slot == other.slot
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.rates, other.rates)
        )

    def __hash__(self):
        return hash((self.transition.tobytes(), self.rates.tobytes(), self.slot))


@dataclass(frozen=True)
class OnOffParams:
    """Gilbert-Elliott on-off channel in the (p_on, burstiness, capacity) parameterization.

    ``burstiness`` is the mean time to change state twice, ``1/p_12 + 1/p_21``;
    the memoryless chain with the same ``p_on`` has ``beta0 = 1 / (p_on p_off)``.
    """

    p_on: float
    burstiness: float
    capacity: float

    def __post_init__(self):
        if not (0.0 < self.p_on < 1.0):
            raise ParameterError(f"p_on must lie in (0, 1), got {self.p_on!r}")
        _positive("burstiness", self.burstiness)
        _positive("capacity", self.capacity)

    @property
    def beta0(self) -> float:
        return 1.0 / (self.p_on * (1.0 - self.p_on))

    @classmethod
    def from_ratio(cls, p_on: float, ratio: float, mean_rate: float) -> "OnOffParams":
        """Build from ``beta / beta0`` and the mean rate ``p_on * capacity``."""
        beta0 = 1.0 / (p_on * (1.0 - p_on))
        return cls(p_on=p_on, burstiness=ratio * beta0, capacity=mean_rate / p_on)


@dataclass(frozen=True)
class ConstantRate:
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "rate", _positive("rate", self.rate))

    @property
    def mean_rate(self) -> float:
        return self.rate


@dataclass(frozen=True)
class PoissonService:
    """Poisson service process: unit service increments at rate ``rate``.

    A packet of ``l`` bits needs ``l`` units, so its service time is Erlang(l, rate).
    """

    rate: float

    def __post_init__(self):
        object.__setattr__(self, "rate", _positive("rate", self.rate))

    @property
    def mean_rate(self) -> float:
        return self.rate


@dataclass(frozen=True)
class MarkovModulated:
    chain: MarkovChannelSpec

    @property
    def mean_rate(self) -> float:
        return self.chain.mean_rate


ServiceModel = Union[ConstantRate, PoissonService, MarkovModulated]


# --------------------------------------------------------------------------- splitting


@dataclass(frozen=True)
class RandomWeighted:
    weights: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if not w or any(x < 0 or not math.isfinite(x) for x in w):
            raise ParameterError("weights must be non-negative and finite")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ParameterError(f"weights must sum to 1, got {sum(w)!r}")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class RoundRobin:
    pass


@dataclass(frozen=True)
class JoinShortestQueue:
    pass


SplittingPolicy = Union[RandomWeighted, RoundRobin, JoinShortestQueue]


@dataclass(frozen=True)
class SystemSpec:
    """External arrivals split over one or more independent servers.

    :param arrivals: the update stream before splitting
    :param servers: one service model per subsystem
    :param splitting: how arrivals are assigned; defaults to an equal random split
    """

    arrivals: ArrivalModel
    servers: tuple
    splitting: SplittingPolicy = field(default=None)

    def __post_init__(self):
        servers = tuple(self.servers)
        if not servers:
            raise ParameterError("at least one server is required")
        object.__setattr__(self, "servers", servers)
        if self.splitting is None:
            k = len(servers)
            object.__setattr__(self, "splitting", RandomWeighted(tuple([1.0 / k] * k)))
        if isinstance(self.splitting, RandomWeighted) and len(self.splitting.weights) != len(servers):
            raise ParameterError("one weight per server is required")

    @property
    def k(self) -> int:
        return len(self.servers)

    @property
    def packet_length(self) -> float:
        return self.arrivals.length

    def with_interval(self, w: float) -> "SystemSpec":
        return replace(self, arrivals=self.arrivals.with_interval(w))

    def with_weights(self, weights) -> "SystemSpec":
        return replace(self, splitting=RandomWeighted(tuple(weights)))

    def check_analytical(self):
        """Raise :class:`SimulationOnlyError` unless a closed-form bound exists for this system."""
        if self.k == 1:
            return
        s = self.splitting
        if isinstance(s, RandomWeighted) and isinstance(self.arrivals, PoissonPackets):
            return
        if isinstance(s, RoundRobin) and isinstance(self.arrivals, Periodic):
            return
        raise SimulationOnlyError(
            f"simulation-only policy: {type(s).__name__} over {type(self.arrivals).__name__} arrivals"
        )

    def subsystem_arrivals(self) -> list:
        """Arrival model seen by each subsystem in the analytical path.

        Random weighted splitting of Poisson arrivals yields independent Poisson streams
        with mean inter-arrival ``w / p_i`` (``None`` for a zero weight). Round robin over
        periodic arrivals yields period ``k w`` with offsets ``i w``.
        """
        self.check_analytical()
        a = self.arrivals
        if self.k == 1:
            return [a]
        if isinstance(self.splitting, RandomWeighted):
            return [
                a.with_interval(a.mean_interarrival / p) if p > 0 else None
                for p in self.splitting.weights
            ]
        period = self.k * a.period
        return [Periodic(a.length, period, (a.offset + i * a.period) % period) for i in range(self.k)]
