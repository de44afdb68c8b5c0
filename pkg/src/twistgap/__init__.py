"""Band structure, gap edges and eigenvalue counting for periodically twisted tubes."""

from .bands import BandChart, EdgeReport, Extremizer, Gap, analyze_edge, find_gaps, sweep_bands
from .bsch import BSOperator, assemble_bs, bs_check, bs_count
from .coupling import CouplingFunction, EdgeEigenfunction, compute_eta, edge_eigenfunction
from .effective import (Channel, CountCurve, DecayProfile, EffectiveModel, count_below, count_curve,
                        fit_log_law, fit_power_law, semiclassical_count)
from .errors import TwistGapError
from .fiber import TwistProfile, assemble_fiber, fiber_eigenvalues, lowest_eigenpairs
from .fulltube import TubeOperator, assemble_tube, gap_window_count
from .geometry import (CrossSectionGrid, CrossSectionShape, PolarGrid, TransverseOperators, assemble_polar,
                       assemble_transverse, build_grid, build_polar_grid)
from .inertia import block_tridiagonal_negative_count, sparse_negative_count, tridiagonal_negative_count

__version__ = "0.1.0"
