"""
Generating synthetic drives
===========================

Radio traces come from a log-distance path loss model with shadowing that is
correlated along the route.  Raw samples every 120 ms are resampled by
Fourier zero padding onto the 10 ms simulation grid and smoothed.
"""

import numpy as np

from holab.tracegen import build_dataset, default_map, random_route

# %%
# Five base stations on a seeded map and three short random routes.

radio_map = default_map(seed=3)
routes = [random_route(seed, duration=30.0) for seed in (11, 12, 13)]
traces = build_dataset(radio_map, routes, n_train=2)

for tr in traces:
    best = np.bincount(tr.rsrp.argmax(axis=1), minlength=tr.n_bs)
    print(f"{tr.id}: {tr.split}, {len(tr.rsrp)} ticks, strongest-BS share {np.round(best / len(tr.rsrp), 2)}")

# %%
# The same path at walking speed is a hundred times longer in ticks but sees
# the same shadowing, so both speeds can be compared on equal footing.

slow = build_dataset(radio_map, [routes[2].at_speed(3.0)], n_train=0)[0]
print(f"{slow.id} at {slow.speed:g} km/h: {len(slow.rsrp)} ticks")
