"""Discretized two-weight inequalities on spaces of homogeneous type."""

from .space import Space, grid1d, grid2d, tree, from_points, from_descriptor
from .dyadic import (DyadicParams, DyadicSystem, build_system, sample_random_system,
                     surgery_probability, is_good, good_mask)
from .haar import HaarBasis, build_basis, haar_project, expectation, split_good_bad
from .operators import Kernel, OperatorMatrix, assemble, apply_forward, apply_adjoint
from .constants import (TwoWeightParams, ConstantsReport, poisson_K, classical_poisson_1d,
                        a2_constant, testing_constant, pivotal_psi, pivotal_constant,
                        operator_norm, carleson_embedding, offsupport_ratio, decay_ratio,
                        weak_boundedness, compute_constants)

__version__ = "0.1.0"
