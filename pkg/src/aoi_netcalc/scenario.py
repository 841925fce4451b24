"""JSON scenario files: parsing with field-level diagnostics, and dumping back.

A scenario describes one system (arrivals, servers, splitting), an update-interval
sweep, the bound and simulation quantile levels and simulation settings::

    {
      "schema_version": 1,
      "system": {
        "arrivals": {"type": "poisson", "length": 1, "mean_interarrival": 1},
        "servers": [{"type": "onoff", "p_on": 0.9, "beta_ratio": 2, "mean_rate": 1},
                    {"type": "poisson", "rate": 1}],
        "splitting": {"type": "random", "weights": [0.5, 0.5]}
      },
      "sweep": {"w_min": 0.6, "w_max": 6, "n_points": 28, "log_scale": false},
      "epsilon": 1e-6,
      "sim": {"n_packets": 1000000, "seed": 1, "quantile_eps": [0.001]},
      "outputs": ["age_bound", "delay_bound", "age_sim", "peak_age_sim", "delay_sim"]
    }

Server types are ``constant``, ``poisson``, ``markov`` (``transition``, ``rates``,
``slot``) and ``onoff`` (``p_on`` with either ``burstiness`` and ``capacity`` or
``beta_ratio`` and ``mean_rate``). Splitting types are ``random`` (``weights`` may be the
string ``"enumerate"`` for two servers), ``round_robin`` and ``jsq``. The sweep value
replaces the arrival interval; the interval given under ``arrivals`` is only a default.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .envelopes import onoff_transition
from .errors import InfeasibleError, ParameterError, ScenarioError
from .models import (
    ConstantRate,
    JoinShortestQueue,
    MarkovChannelSpec,
    MarkovModulated,
    OnOffParams,
    Periodic,
    PoissonPackets,
    PoissonService,
    RandomWeighted,
    RoundRobin,
    SystemSpec,
)

SCHEMA_VERSION = 1
OUTPUT_KINDS = ("age_bound", "delay_bound", "age_sim", "peak_age_sim", "delay_sim")
BOUND_EPS_DEFAULT = 1e-6
SIM_EPS_DEFAULT = 1e-3


@dataclass(frozen=True)
class Sweep:
    w_min: float
    w_max: float
    n_points: int
    log_scale: bool = False

    def grid(self) -> np.ndarray:
        if self.n_points == 1:
            return np.array([self.w_min])
        if self.log_scale:
            return np.geomspace(self.w_min, self.w_max, self.n_points)
        return np.linspace(self.w_min, self.w_max, self.n_points)


@dataclass(frozen=True)
class SimSettings:
    n_packets: int = 1_000_000
    seed: int = 0
    quantile_eps: tuple = (SIM_EPS_DEFAULT,)
    warmup_fraction: float = 0.1
    strict_slots: bool = False


@dataclass(frozen=True)
class Scenario:
    system: SystemSpec
    sweep: Sweep
    epsilon: float | None = None
    sim: SimSettings = field(default_factory=SimSettings)
    outputs: tuple = OUTPUT_KINDS
    enumerate_weights: bool = False

    @property
    def bound_eps(self) -> float:
        return BOUND_EPS_DEFAULT if self.epsilon is None else self.epsilon

    @property
    def sim_eps(self) -> float:
        return self.sim.quantile_eps[0]


# --------------------------------------------------------------------------- parsing


class _Reader:
    """Typed access to a JSON object that reports the dotted path of bad fields."""

    def __init__(self, obj, path):
        if not isinstance(obj, dict):
            raise ScenarioError(f"{path or '<root>'}: expected an object, got {type(obj).__name__}")
        self.obj = obj
        self.path = path

    def _where(self, key):
        return f"{self.path}.{key}" if self.path else key

    def has(self, key):
        return key in self.obj

    def raw(self, key, default=...):
        if key not in self.obj:
            if default is ...:
                raise ScenarioError(f"{self._where(key)}: missing required field")
            return default
        return self.obj[key]

    def number(self, key, default=...):
        v = self.raw(key, default)
        if v is default and default is not ...:
            return v
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ScenarioError(f"{self._where(key)}: expected a finite number, got {v!r}")
        return float(v)

    def integer(self, key, default=...):
        v = self.raw(key, default)
        if v is default and default is not ...:
            return v
        if isinstance(v, bool) or not isinstance(v, int):
            raise ScenarioError(f"{self._where(key)}: expected an integer, got {v!r}")
        return v

    def flag(self, key, default=...):
        v = self.raw(key, default)
        if not isinstance(v, bool):
            raise ScenarioError(f"{self._where(key)}: expected true or false, got {v!r}")
        return v

    def string(self, key, default=...):
        v = self.raw(key, default)
        if not isinstance(v, str):
            raise ScenarioError(f"{self._where(key)}: expected a string, got {v!r}")
        return v

    def child(self, key, default=...):
        v = self.raw(key, default)
        return _Reader(v, self._where(key))

    def items(self, key):
        v = self.raw(key)
        if not isinstance(v, list):
            raise ScenarioError(f"{self._where(key)}: expected a list")
        return [(f"{self._where(key)}[{i}]", x) for i, x in enumerate(v)]


def _guard(path, fn, *args):
    """Re-raise model validation errors with the field path attached."""
    try:
        return fn(*args)
    except InfeasibleError as exc:
        raise InfeasibleError(f"{path}: {exc}") from None
    except ParameterError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def _parse_arrivals(r: _Reader):
    kind = r.string("type")
    if kind == "poisson":
        return _guard(r.path, PoissonPackets, r.number("length", 1.0), r.number("mean_interarrival", 1.0))
    if kind == "periodic":
        return _guard(r.path, Periodic, r.number("length", 1.0), r.number("period", 1.0), r.number("offset", 0.0))
    raise ScenarioError(f"{r.path}.type: unknown arrival type {kind!r}")


def _matrix(path, v):
    try:
        return np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}: expected a numeric array") from None


def _parse_server(r: _Reader):
    kind = r.string("type")
    if kind == "constant":
        return _guard(r.path, ConstantRate, r.number("rate"))
    if kind == "poisson":
        return _guard(r.path, PoissonService, r.number("rate"))
    if kind == "markov":
        P = _matrix(r.path + ".transition", r.raw("transition"))
        rates = _matrix(r.path + ".rates", r.raw("rates"))
        chain = _guard(r.path, MarkovChannelSpec, P, rates, r.number("slot", 1.0))
        return MarkovModulated(chain)
    if kind == "onoff":
        p_on = r.number("p_on")
        if r.has("beta_ratio"):
            params = _guard(r.path, OnOffParams.from_ratio, p_on, r.number("beta_ratio"), r.number("mean_rate"))
        else:
            params = _guard(r.path, OnOffParams, p_on, r.number("burstiness"), r.number("capacity"))
        return MarkovModulated(_guard(r.path, onoff_transition, params))
    raise ScenarioError(f"{r.path}.type: unknown server type {kind!r}")


def _parse_splitting(r: _Reader, k):
    kind = r.string("type")
    if kind == "random":
        weights = r.raw("weights", None)
        if weights == "enumerate":
            if k != 2:
                raise ScenarioError(f"{r.path}.weights: enumeration needs exactly two servers")
            return RandomWeighted((0.5, 0.5)), True
        if weights is None:
            return RandomWeighted(tuple([1.0 / k] * k)), False
        w = _matrix(r.path + ".weights", weights)
        return _guard(r.path + ".weights", RandomWeighted, tuple(w.tolist())), False
    if kind == "round_robin":
        return RoundRobin(), False
    if kind == "jsq":
        return JoinShortestQueue(), False
    raise ScenarioError(f"{r.path}.type: unknown splitting type {kind!r}")


def scenario_from_dict(d) -> Scenario:
    root = _Reader(d, "")
    version = root.integer("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version: unsupported version {version!r}, expected {SCHEMA_VERSION}")
    sysr = root.child("system")
    arrivals = _parse_arrivals(sysr.child("arrivals"))
    servers = tuple(_parse_server(_Reader(v, p)) for p, v in sysr.items("servers"))
    if not servers:
        raise ScenarioError("system.servers: at least one server is required")
    splitting, enumerate_weights = _parse_splitting(sysr.child("splitting", {"type": "random"}), len(servers))
    if isinstance(splitting, RandomWeighted) and len(splitting.weights) != len(servers):
        raise ScenarioError("system.splitting.weights: one weight per server is required")
    system = SystemSpec(arrivals, servers, splitting)

    sw = root.child("sweep", {"w_min": arrivals.interval, "w_max": arrivals.interval, "n_points": 1})
    sweep = Sweep(sw.number("w_min"), sw.number("w_max"), sw.integer("n_points"), sw.flag("log_scale", False))
    if not (0 < sweep.w_min <= sweep.w_max) or sweep.n_points < 1:
        raise ScenarioError("sweep: need 0 < w_min <= w_max and n_points >= 1")

    eps = root.number("epsilon", None)
    if eps is not None and not (0.0 < eps < 1.0):
        raise ScenarioError(f"epsilon: must lie in (0, 1), got {eps!r}")

    sr = root.child("sim", {})
    q = sr.raw("quantile_eps", [SIM_EPS_DEFAULT])
    if not isinstance(q, list) or not q or not all(isinstance(e, (int, float)) and 0 < e < 1 for e in q):
        raise ScenarioError("sim.quantile_eps: expected a non-empty list of probabilities in (0, 1)")
    sim = SimSettings(
        n_packets=sr.integer("n_packets", SimSettings.n_packets),
        seed=sr.integer("seed", 0),
        quantile_eps=tuple(float(e) for e in q),
        warmup_fraction=sr.number("warmup_fraction", 0.1),
        strict_slots=sr.flag("strict_slots", False),
    )
    if sim.n_packets < 1000:
        raise ScenarioError("sim.n_packets: at least 1000 packets are required")
    if not (0 <= sim.seed < 2 ** 64):
        raise ScenarioError("sim.seed: must be an unsigned 64-bit integer")
    if not (0.0 <= sim.warmup_fraction < 1.0):
        raise ScenarioError("sim.warmup_fraction: must lie in [0, 1)")

    outputs = root.raw("outputs", list(OUTPUT_KINDS))
    if not isinstance(outputs, list) or any(o not in OUTPUT_KINDS for o in outputs):
        raise ScenarioError(f"outputs: expected a list drawn from {list(OUTPUT_KINDS)}")
    return Scenario(system, sweep, eps, sim, tuple(outputs), enumerate_weights)


def loads(text: str) -> Scenario:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(d)


def load(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


# --------------------------------------------------------------------------- dumping


def _arrivals_dict(a):
    if isinstance(a, Periodic):
        return {"type": "periodic", "length": a.length, "period": a.period, "offset": a.offset}
    return {"type": "poisson", "length": a.length, "mean_interarrival": a.mean_interarrival}


def _server_dict(s):
    if isinstance(s, ConstantRate):
        return {"type": "constant", "rate": s.rate}
    if isinstance(s, PoissonService):
        return {"type": "poisson", "rate": s.rate}
    c = s.chain
    return {"type": "markov", "transition": c.transition.tolist(), "rates": c.rates.tolist(), "slot": c.slot}


def scenario_to_dict(sc: Scenario) -> dict:
    sp = sc.system.splitting
    if isinstance(sp, RandomWeighted):
        split = {"type": "random", "weights": "enumerate" if sc.enumerate_weights else list(sp.weights)}
    elif isinstance(sp, RoundRobin):
        split = {"type": "round_robin"}
    else:
        split = {"type": "jsq"}
    d = {
        "schema_version": SCHEMA_VERSION,
        "system": {
            "arrivals": _arrivals_dict(sc.system.arrivals),
            "servers": [_server_dict(s) for s in sc.system.servers],
            "splitting": split,
        },
        "sweep": {
            "w_min": sc.sweep.w_min,
            "w_max": sc.sweep.w_max,
            "n_points": sc.sweep.n_points,
            "log_scale": sc.sweep.log_scale,
        },
        "sim": {
            "n_packets": sc.sim.n_packets,
            "seed": sc.sim.seed,
            "quantile_eps": list(sc.sim.quantile_eps),
            "warmup_fraction": sc.sim.warmup_fraction,
            "strict_slots": sc.sim.strict_slots,
        },
        "outputs": list(sc.outputs),
    }
    if sc.epsilon is not None:
        d["epsilon"] = sc.epsilon
    return d


def dumps(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=2) + "\n"


def with_overrides(sc: Scenario, eps=None, seed=None, packets=None, sim_eps=None) -> Scenario:
    """Apply command-line overrides; ``eps`` sets the bound level, ``sim_eps`` the simulation level."""
    sim = sc.sim
    if seed is not None:
        sim = replace(sim, seed=int(seed))
    if packets is not None:
        sim = replace(sim, n_packets=int(packets))
    if sim_eps is not None:
        sim = replace(sim, quantile_eps=(float(sim_eps),) + tuple(e for e in sim.quantile_eps if e != sim_eps))
    out = replace(sc, sim=sim)
    if eps is not None:
        out = replace(out, epsilon=float(eps))
    return out
