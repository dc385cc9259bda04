"""Stopping cubes for a weight with one heavy atom, and their mass decay."""

import numpy as np

from hartlab import DyadicParams, TwoWeightParams, build_system, grid1d, pivotal_constant
from hartlab.corona import build_coronas, build_stopping_cubes, verify_corona_carleson

space = grid1d(256)
system = build_system(space, DyadicParams(), 0)
params = TwoWeightParams()
rng = np.random.default_rng(0)
u = np.exp(rng.standard_normal(256)) * space.mu
u[200] *= 500.0
v = np.exp(rng.standard_normal(256)) * space.mu

pivotal, _, _ = pivotal_constant(system, u, v, params)
forest = build_stopping_cubes(system, u, v, pivotal, params)
corona = build_coronas(forest, system, system, params.r)
res = verify_corona_carleson(forest, corona, None, u, v, "stopping_mass")

print(f"pivotal constant {pivotal:.4g}, {len(forest.members)} stopping cubes")
for s in forest.members:
    c = system.cubes[s]
    x = space.coords[c.members, 0]
    print(f"  generation {forest.generation[s]}: [{x.min():.3f}, {x.max():.3f}]  "
          f"u-mass {u[c.members].sum():.4g}  corona size {len(corona.u_corona[s])}")
print(f"largest child-mass ratio {res.details['quarter_ratio']:.4f} (bound 0.25)")
