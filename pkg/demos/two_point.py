"""Every constant of the two-point scenario next to its hand value."""

import math

import numpy as np

from hartlab import DyadicParams, TwoWeightParams, build_system, compute_constants, grid1d
from hartlab.operators import OperatorMatrix

space = grid1d(2)
m = OperatorMatrix.from_entries(space, [[0.0, 2.0], [-2.0, 0.0]])
u, v = np.array([1.0, 4.0]), np.array([9.0, 1.0])
system = build_system(space, DyadicParams(), 0)
rep = compute_constants(system, m, u, v, TwoWeightParams())

print(f"operator norm  {rep.norm:.12g}   (hand: 12)")
print(f"testing        {rep.testing:.12g}   (hand: sqrt(116) = {math.sqrt(116):.12g})")
print(f"testing dual   {rep.testing_dual:.12g}   (hand: sqrt(130) = {math.sqrt(130):.12g})")
print(f"A2             {rep.a2_max:.6g}")
print(f"pivotal        {rep.pivotal_max:.6g}")
print(f"ratio          {rep.ratio:.6g}")
print(f"common atom    {rep.flags['common_atom']}")
