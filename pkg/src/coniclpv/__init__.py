"""Conic-sector analysis, average conicity and nominal-cone design for LPV systems."""
from .conic import (
    ConicityCertificate,
    ConicSector,
    average_conicity_continuous,
    average_conicity_discrete,
    certify,
    conicity_index_eps,
    find_conic_bounds,
    iqc_integral,
    nonconicity_index_alpha,
    partition_trajectory,
    riemann_convergence_check,
    supply_rate,
)
from .errors import *  # noqa: F401,F403
from .lpv import AffineLpv, GridLpv, InputClass, ParameterBounds, ParameterTrajectory, discretize_trajectory
from .stability import (
    SectorPair,
    check_sector_conditions,
    complementary_cone,
    l2_gain_estimate,
    qsr_matrices,
    verify_feedback_iqc,
)
from .synthesis import (
    ClosedLoopSystem,
    assemble_closed_loop,
    closed_loop_indices,
    design_nominal_cone,
    realize_conic_controller,
)

__version__ = "0.1.0"
