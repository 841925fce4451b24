"""Discrete-event simulation of single and parallel FCFS systems and their age process.

Every server is represented by its cumulative service ``S(t)`` (bits served by time
``t`` if the server were always backlogged) and the inverse ``S^-1``. FCFS service is
then a Lindley recursion in service coordinates,

    F_n = max(S(A_n), F_{n-1}) + l_n,     D_n = S^-1(F_n),

which covers constant-rate links (``S = r t``), Poisson service (``S`` counts the points
of a rate-``r`` Poisson process, so an ``l``-bit packet needs ``l`` points and takes an
Erlang(l, r) time) and slotted Markov channels (``S`` piecewise linear over slots). The
same representation gives the unfinished work ``[F_last - S(t)]_+`` used by
join-shortest-queue.

Random streams come from numpy's counter-based Philox generator; the seed is expanded
with :class:`numpy.random.SeedSequence` into independent child streams for the
arrivals, the splitting decision and each server.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InsufficientDataError, ParameterError
from .models import (
    ConstantRate,
    JoinShortestQueue,
    MarkovChannelSpec,
    MarkovModulated,
    Periodic,
    PoissonPackets,
    PoissonService,
    RandomWeighted,
    RoundRobin,
    SystemSpec,
)

MIN_PACKETS = 1000
MIN_EFFECTIVE_UPDATES = 100
DEFAULT_EPS = (1e-3,)

_KIND_CONSTANT, _KIND_POINTS, _KIND_SLOTS = 0, 1, 2


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _streams(seed, k):
    """Independent generators for arrivals, splitting and each of ``k`` servers."""
    children = np.random.SeedSequence(seed).spawn(2 + k)
    gens = [np.random.Generator(np.random.Philox(c)) for c in children]
    return gens[0], gens[1], gens[2:]


# --------------------------------------------------------------------------- arrivals


def generate_arrivals(model, n, rng=None) -> np.ndarray:
    """``n`` arrival instants, strictly after ``t = 0``.

    Poisson: cumulative sums of exponential gaps with mean ``w``. Periodic:
    ``offset + k * period`` for ``k = 1 .. n``.
    """
    if isinstance(model, Periodic):
        return model.offset + model.period * np.arange(1, n + 1, dtype=float)
    if isinstance(model, PoissonPackets):
        if rng is None:
            raise ParameterError("Poisson arrivals need a random generator")
        return np.cumsum(rng.exponential(model.mean_interarrival, size=n))
    raise ParameterError(f"unsupported arrival model {model!r}")


# --------------------------------------------------------------------------- service paths


@numba.njit(cache=True)
def _markov_states(cum_p, start, u):
    n = len(u)
    out = np.empty(n, dtype=np.int32)
    s = start
    m = cum_p.shape[1]
    for t in range(n):
        out[t] = s
        row = cum_p[s]
        nxt = m - 1
        for j in range(m):
            if u[t] < row[j]:
                nxt = j
                break
        s = nxt
    return out, s


class ServicePath:
    """Cumulative service of one server, generated lazily as the horizon grows.

    ``strict_slots`` makes slotted channels start and finish packets only at slot
    boundaries instead of interpolating inside a slot.
    """

    def __init__(self, model, rng: np.random.Generator, strict_slots=False):
        self.model = model
        self.rng = rng
        self.strict = bool(strict_slots)
        self.horizon = 0.0
        if isinstance(model, ConstantRate):
            self.kind = _KIND_CONSTANT
            self.rate = model.rate
            self.data = np.zeros(1)
            self.horizon = math.inf
        elif isinstance(model, PoissonService):
            self.kind = _KIND_POINTS
            self.rate = model.rate
            self.data = np.zeros(0)
        elif isinstance(model, MarkovModulated):
            self.kind = _KIND_SLOTS
            chain: MarkovChannelSpec = model.chain
            self.rate = chain.mean_rate
            self.slot = chain.slot
            self._cum_p = np.cumsum(chain.transition, axis=1)
            self._cum_p[:, -1] = 1.0
            self._state = int(rng.choice(chain.n_states, p=chain.stationary()))
            self._bits = np.asarray(chain.rates)
            # one byte per slot keeps long sparse runs within memory
            self._state_dtype = np.uint8 if chain.n_states <= 255 else np.int32
            self.states = np.zeros(0, dtype=self._state_dtype)
            self.data = np.zeros(1)  # cumulative bits at slot boundaries
        else:
            raise ParameterError(f"unsupported service model {model!r}")

    def extend(self, horizon):
        """Make the path cover ``[0, horizon]``."""
        if horizon <= self.horizon:
            return
        if self.kind == _KIND_POINTS:
            pts = self.data
            last = pts[-1] if len(pts) else 0.0
            need = horizon - last
            while last < horizon:
                m = int(self.rate * need * 1.05 + 10.0 * math.sqrt(self.rate * need + 1.0) + 16)
                new = last + np.cumsum(self.rng.exponential(1.0 / self.rate, size=m))
                pts = np.concatenate([pts, new])
                last = pts[-1]
                need = horizon - last
            self.data = pts
            self.horizon = last
        elif self.kind == _KIND_SLOTS:
            have = len(self.states)
            target = int(math.ceil(horizon / self.slot)) + 1
            m = max(target - have, have // 2, 1024)
            u = self.rng.random(m)
            states, self._state = _markov_states(self._cum_p, self._state, u)
            self.states = np.concatenate([self.states, states.astype(self._state_dtype)])
            inc = self._bits[states]
            self.data = np.concatenate([self.data, self.data[-1] + np.cumsum(inc)])
            self.horizon = len(self.states) * self.slot

    @property
    def total(self):
        """Service coordinate reached at the current horizon."""
        if self.kind == _KIND_CONSTANT:
            return math.inf
        if self.kind == _KIND_POINTS:
            return float(len(self.data))
        return float(self.data[-1])

    def start_coordinate(self, t):
        """``S(t)``, or for strict slots ``S`` at the next slot boundary."""
        t = np.asarray(t, dtype=float)
        if self.kind == _KIND_CONSTANT:
            return self.rate * t
        if self.kind == _KIND_POINTS:
            return np.searchsorted(self.data, t, side="right").astype(float)
        x = t / self.slot
        if self.strict:
            return self.data[np.ceil(x).astype(np.int64)]
        j = np.floor(x).astype(np.int64)
        return self.data[j] + (x - j) * self._bits[self.states[np.minimum(j, len(self.states) - 1)]]

    def finish_time(self, F):
        """``S^-1(F)``: first time the cumulative service reaches ``F``."""
        F = np.asarray(F, dtype=float)
        if self.kind == _KIND_CONSTANT:
            return F / self.rate
        if self.kind == _KIND_POINTS:
            idx = np.ceil(F - 1e-9).astype(np.int64) - 1
            return self.data[idx]
        j = np.searchsorted(self.data, F, side="left") - 1
        j = np.maximum(j, 0)
        if self.strict:
            return (j + 1) * self.slot
        return (j + (F - self.data[j]) / self._bits[self.states[j]]) * self.slot


def _fcfs_coordinates(start, lengths):
    """Vectorized Lindley recursion ``F_n = max(start_n, F_{n-1}) + l_n``."""
    L = np.cumsum(lengths)
    prev = np.concatenate([[0.0], L[:-1]])
    return L + np.maximum.accumulate(start - prev)


def serve_fcfs(arrivals, lengths, path: ServicePath):
    """Departure instants of a FCFS server fed with the (sorted) ``arrivals``."""
    arrivals = np.asarray(arrivals, dtype=float)
    lengths = np.broadcast_to(np.asarray(lengths, dtype=float), arrivals.shape)
    if len(arrivals) == 0:
        return np.zeros(0)
    if path.kind == _KIND_CONSTANT:
        return _fcfs_coordinates(path.start_coordinate(arrivals), lengths) / path.rate
    horizon = arrivals[-1] + 64.0 * float(lengths.max()) / path.rate
    path.extend(horizon)
    while True:
        F = _fcfs_coordinates(path.start_coordinate(arrivals), lengths)
        if F[-1] < path.total - 1e-9:
            return path.finish_time(F)
        path.extend(max(path.horizon * 1.25, path.horizon + 64.0 * float(lengths.max()) / path.rate))


# --------------------------------------------------------------------------- splitting


@numba.njit(cache=True)
def _coord(kind, rate, slot, strict, data, bits, t):
    if kind == 0:
        return rate * t
    if kind == 1:
        return float(np.searchsorted(data, t, side="right"))
    x = t / slot
    if strict:
        return data[int(math.ceil(x))]
    j = int(math.floor(x))
    return data[j] + (x - j) * bits[j]


@numba.njit(cache=True)
def _jsq_kernel(arrivals, lengths, kinds, rates, slots, stricts, data, offsets, bits, boffsets, limits):
    """Assign each arrival to the server with least unfinished work; ties go to the lowest index.

    Returns the assignment and the number of arrivals processed before some path ran
    past its generated horizon (the caller extends and restarts).
    """
    n = len(arrivals)
    k = len(kinds)
    out = np.empty(n, dtype=np.int64)
    last = np.zeros(k)
    for m in range(n):
        t = arrivals[m]
        best = -1
        best_work = 0.0
        best_start = 0.0
        for i in range(k):
            d = data[offsets[i]:offsets[i + 1]]
            b = bits[boffsets[i]:boffsets[i + 1]]
            s = _coord(kinds[i], rates[i], slots[i], stricts[i], d, b, t)
            work = last[i] - s
            if work < 0.0:
                work = 0.0
            if best < 0 or work < best_work:
                best, best_work, best_start = i, work, s
        f = max(best_start, last[best]) + lengths[m]
        if f >= limits[best]:
            return out, m
        last[best] = f
        out[m] = best
    return out, n


def _jsq_assign(arrivals, lengths, paths):
    k = len(paths)
    horizon = arrivals[-1] + 64.0 * float(lengths.max()) / min(p.rate for p in paths)
    for p in paths:
        p.extend(horizon)
    while True:
        data, bits = [], []
        for p in paths:
            data.append(np.asarray(p.data, dtype=float))
            if p.kind == _KIND_SLOTS:
                bits.append(p._bits[p.states].astype(float))
            else:
                bits.append(np.zeros(1))
        offsets = np.concatenate([[0], np.cumsum([len(d) for d in data])]).astype(np.int64)
        boffsets = np.concatenate([[0], np.cumsum([len(b) for b in bits])]).astype(np.int64)
        assign, done = _jsq_kernel(
            arrivals,
            lengths,
            np.array([p.kind for p in paths], dtype=np.int64),
            np.array([p.rate for p in paths]),
            np.array([getattr(p, "slot", 1.0) for p in paths]),
            np.array([p.strict for p in paths]),
            np.concatenate(data),
            offsets,
            np.concatenate(bits),
            boffsets,
            np.array([p.total - 1e-9 for p in paths]),
        )
        if done == len(arrivals):
            return assign
        for p in paths:
            p.extend(max(p.horizon * 1.25, p.horizon + 64.0 * float(lengths.max()) / p.rate))


def split(arrivals, policy, k, rng=None, lengths=None, paths=None) -> np.ndarray:
    """Subsystem index of every arrival.

    Random weighted: i.i.d. categorical draws. Round robin: cyclic in arrival order.
    Join-shortest-queue: least unfinished work in bits at the arrival instant, which needs
    the service ``paths`` of all servers.
    """
    n = len(arrivals)
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    if isinstance(policy, RandomWeighted):
        return rng.choice(k, size=n, p=np.asarray(policy.weights))
    if isinstance(policy, RoundRobin):
        return np.arange(n, dtype=np.int64) % k
    if isinstance(policy, JoinShortestQueue):
        if paths is None or lengths is None:
            raise ParameterError("join-shortest-queue needs the service paths")
        return _jsq_assign(np.asarray(arrivals, float), np.broadcast_to(np.asarray(lengths, float), (n,)).copy(), paths)
    raise ParameterError(f"unsupported splitting policy {policy!r}")


# --------------------------------------------------------------------------- records and age


@dataclass(frozen=True)
class PacketRecord:
    """Time stamps of one packet; the simulator itself works on the column arrays."""

    index: int
    t_arrival: float
    t_departure: float
    subsystem: int
    length: float


@dataclass
class Records:
    """Column-oriented packet records in arrival order."""

    t_arrival: np.ndarray
    t_departure: np.ndarray
    subsystem: np.ndarray
    length: np.ndarray

    def __len__(self):
        return len(self.t_arrival)

    def __iter__(self):
        for n in range(len(self)):
            yield PacketRecord(n, float(self.t_arrival[n]), float(self.t_departure[n]),
                               int(self.subsystem[n]), float(self.length[n]))

    def permuted(self, perm) -> "Records":
        return Records(*(a[perm] for a in (self.t_arrival, self.t_departure, self.subsystem, self.length)))


def age_at(t_arrival, t_departure, t):
    """``t - max{T_A(n) : T_D(n) <= t}`` evaluated at each ``t`` (NaN before the first delivery)."""
    A = np.asarray(t_arrival, float)
    D = np.asarray(t_departure, float)
    order = np.argsort(D, kind="stable")
    run = np.maximum.accumulate(A[order])
    idx = np.searchsorted(D[order], np.asarray(t, float), side="right") - 1
    out = np.asarray(t, float) - np.where(idx >= 0, run[np.maximum(idx, 0)], np.nan)
    return out


class AgeTrace:
    """Exact sawtooth of the age between consecutive effective updates.

    Segment ``k`` starts right after effective update ``k`` with age ``s_k = d_k - a_k``
    and grows linearly until the next effective update, where it peaks at
    ``e_k = d_{k+1} - a_k``. Only segments of updates generated at or after ``t_start``
    are kept.
    """

    def __init__(self, t_arrival, t_departure, t_start=-math.inf):
        A = np.asarray(t_arrival, float)
        D = np.asarray(t_departure, float)
        order = np.lexsort((A, D))
        A, D = A[order], D[order]
        prev = np.concatenate([[-math.inf], np.maximum.accumulate(A)[:-1]])
        eff = A > prev
        a, d = A[eff], D[eff]
        # simultaneous deliveries: only the freshest one of a group resets the age
        keep = np.concatenate([d[1:] > d[:-1], [True]])
        a, d = a[keep], d[keep]
        s = d[:-1] - a[:-1]
        e = d[1:] - a[:-1]
        sel = a[:-1] >= t_start
        self.start = s[sel]
        self.end = e[sel]
        self.n_effective = int(sel.sum())
        self._s_sorted = np.sort(self.start)
        self._e_sorted = np.sort(self.end)
        self._s_suffix = np.concatenate([np.cumsum(self._s_sorted[::-1])[::-1], [0.0]])
        self._e_suffix = np.concatenate([np.cumsum(self._e_sorted[::-1])[::-1], [0.0]])
        self.total_time = float(np.sum(self.end - self.start))

    @property
    def peaks(self) -> np.ndarray:
        return self.end

    @staticmethod
    def _excess(sorted_v, suffix, x):
        # sum_k (v_k - x)_+
        i = np.searchsorted(sorted_v, x, side="right")
        return suffix[i] - (len(sorted_v) - i) * x

    def _mass_above(self, x):
        x = np.asarray(x, float)
        return self._excess(self._e_sorted, self._e_suffix, x) - self._excess(self._s_sorted, self._s_suffix, x)

    def ccdf(self, x):
        """Fraction of observed time during which the age exceeds ``x``."""
        return np.clip(self._mass_above(x) / self.total_time, 0.0, 1.0)

    def quantile(self, eps) -> float:
        """Smallest ``x`` with time-average ``P[age > x] <= eps`` (exact, no time grid)."""
        target = eps * self.total_time
        knots = np.union1d(self._s_sorted, self._e_sorted)
        g = self._mass_above(knots)
        i = int(np.argmax(g <= target))
        if i == 0:
            return float(knots[0])
        x0, x1, g0, g1 = knots[i - 1], knots[i], g[i - 1], g[i]
        return float(x0 + (g0 - target) * (x1 - x0) / (g0 - g1))

    def mean(self) -> float:
        return float(np.sum(self.end ** 2 - self.start ** 2) / (2.0 * self.total_time))

    def ccdf_standard_error(self, x, n_batches=50) -> float:
        """Batch-means standard error of :meth:`ccdf` at a single ``x``.

        The segments are cut into ``n_batches`` contiguous blocks in time; block
        estimates are close to independent once blocks are much longer than a busy period.
        """
        x = float(x)
        over = np.clip(self.end - np.maximum(self.start, x), 0.0, None)
        dur = self.end - self.start
        est = np.array([o.sum() / d.sum() for o, d in zip(np.array_split(over, n_batches), np.array_split(dur, n_batches))])
        return float(est.std(ddof=1) / math.sqrt(n_batches))


def empirical_quantile(samples, eps) -> float:
    """Smallest sample value ``x`` with ``P[X > x] <= eps`` under the empirical law."""
    return float(np.quantile(np.asarray(samples, float), 1.0 - eps, method="inverted_cdf"))


@dataclass
class SimResult:
    age_quantiles: dict
    peak_age_quantiles: dict
    delay_quantiles: dict
    mean_age: float
    mean_delay: float
    samples_used: int
    n_effective: int
    seed: int


def warmup_threshold(t_arrival, warmup_fraction) -> float:
    """Arrival time separating the discarded warmup packets from the measured ones."""
    if not (0.0 <= warmup_fraction < 1.0):
        raise ParameterError(f"warmup_fraction must lie in [0, 1), got {warmup_fraction!r}")
    A = np.sort(np.asarray(t_arrival, float))
    return float(A[int(math.floor(warmup_fraction * len(A)))])


def age_statistics(records: Records, quantile_eps=DEFAULT_EPS, warmup_fraction=0.1, seed=0) -> SimResult:
    """Age, peak-age and delay quantiles of a merged set of packet records.

    The age is the time-average over the sawtooth after warmup, peak ages are the values
    just before each effective reset and delays are per packet, over all packets.
    """
    t0 = warmup_threshold(records.t_arrival, warmup_fraction)
    trace = AgeTrace(records.t_arrival, records.t_departure, t0)
    if trace.n_effective < MIN_EFFECTIVE_UPDATES:
        raise InsufficientDataError(f"only {trace.n_effective} effective updates after warmup")
    live = records.t_arrival >= t0
    delay = (records.t_departure - records.t_arrival)[live]
    # sort so that sums do not depend on the order the records were given in
    delay = np.sort(delay)
    eps = sorted({float(e) for e in quantile_eps}, reverse=True)
    return SimResult(
        age_quantiles={e: trace.quantile(e) for e in eps},
        peak_age_quantiles={e: empirical_quantile(trace.peaks, e) for e in eps},
        delay_quantiles={e: empirical_quantile(delay, e) for e in eps},
        mean_age=trace.mean(),
        mean_delay=float(delay.mean()),
        samples_used=int(live.sum()),
        n_effective=trace.n_effective,
        seed=int(seed),
    )


# --------------------------------------------------------------------------- driver


@dataclass(frozen=True)
class SimScenario:
    system: SystemSpec
    n_packets: int = 10_000_000
    seed: int = 0
    quantile_eps: tuple = DEFAULT_EPS
    warmup_fraction: float = 0.1
    strict_slots: bool = False

    def __post_init__(self):
        if int(self.n_packets) < MIN_PACKETS:
            raise ParameterError(f"n_packets must be at least {MIN_PACKETS}")
        if not (0.0 <= self.warmup_fraction < 1.0):
            raise ParameterError("warmup_fraction must lie in [0, 1)")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ParameterError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "quantile_eps", tuple(float(e) for e in self.quantile_eps))


def simulate_records(system: SystemSpec, n_packets, seed, strict_slots=False) -> Records:
    """Run the system and return per-packet records in arrival order."""
    rng_arr, rng_split, rng_srv = _streams(seed, system.k)
    A = generate_arrivals(system.arrivals, int(n_packets), rng_arr)
    lengths = np.full(len(A), float(system.packet_length))
    paths = [ServicePath(s, g, strict_slots) for s, g in zip(system.servers, rng_srv)]
    assign = split(A, system.splitting, system.k, rng_split, lengths, paths)
    D = np.empty_like(A)
    for i, path in enumerate(paths):
        m = assign == i
        D[m] = serve_fcfs(A[m], lengths[m], path)
    return Records(A, D, assign, lengths)


def simulate(scenario: SimScenario) -> SimResult:
    rec = simulate_records(scenario.system, scenario.n_packets, scenario.seed, scenario.strict_slots)
    return age_statistics(rec, scenario.quantile_eps, scenario.warmup_fraction, scenario.seed)
