"""Scheduling over two parallel servers: random split, round robin, join the shortest queue.

Run with ``python demos/scheduling_policies.py`` (about a minute). Two rate-1 Poisson
servers at high load. Smarter scheduling cuts the delay tail, but the age barely moves,
because the age only cares about the freshest delivered update.
"""
# %%
from aoi_netcalc.models import JoinShortestQueue, PoissonPackets, PoissonService, RandomWeighted, RoundRobin, SystemSpec
from aoi_netcalc.sim import SimScenario, simulate

EPS, N, W = 1e-3, 2_000_000, 0.6
policies = {"random": RandomWeighted((0.5, 0.5)), "round robin": RoundRobin(), "JSQ": JoinShortestQueue()}

print(f"{'policy':>12} {'delay q':>8} {'age q':>7} {'mean age':>9}")
for name, pol in policies.items():
    system = SystemSpec(PoissonPackets(1, W), (PoissonService(1),) * 2, pol)
    r = simulate(SimScenario(system, N, seed=7, quantile_eps=(EPS,)))
    print(f"{name:>12} {r.delay_quantiles[EPS]:8.2f} {r.age_quantiles[EPS]:7.2f} {r.mean_age:9.2f}")
