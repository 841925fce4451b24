"""Does splitting an update stream over two slow servers beat one fast server?

Run with ``python demos/parallel_vs_single_mm1.py``. Prints the 1e-6 age bound
quantile against the update interval for three systems fed by Poisson updates of one
bit each: one server of rate 1, one of rate 2, and two servers of rate 1 with an
equal random split.
"""
# %%
import numpy as np

from aoi_netcalc.bounds import sweep
from aoi_netcalc.models import PoissonPackets, PoissonService, SystemSpec

EPS = 1e-6
ws = np.round(np.geomspace(0.55, 8.0, 16), 3)

systems = {
    "single r=1": SystemSpec(PoissonPackets(1, 1), (PoissonService(1),)),
    "single r=2": SystemSpec(PoissonPackets(1, 1), (PoissonService(2),)),
    "2 x r=1": SystemSpec(PoissonPackets(1, 1), (PoissonService(1),) * 2),
}

# %% one row per update interval; blanks mark intervals where the system is unstable
table = {name: sweep(s, ws, EPS) for name, s in systems.items()}
print(f"{'w':>7}" + "".join(f"{n:>14}" for n in systems))
for i, w in enumerate(ws):
    cells = []
    for name in systems:
        row = table[name][i]
        cells.append(f"{row.age_quantile:14.2f}" if row.stable else f"{'':>14}")
    print(f"{w:7.3f}" + "".join(cells))

# %% the best operating point of each system
for name, rows in table.items():
    best = min((r for r in rows if r.stable), key=lambda r: r.age_quantile)
    print(f"{name:>12}: best w = {best.w:.3f} (rate 1/w = {1 / best.w:.2f}), age bound {best.age_quantile:.2f}")

# The single fast server wins, but the parallel system gets close while each of its
# servers only has half the capacity. Sending updates too fast hurts every system,
# since packets queue behind stale ones.
