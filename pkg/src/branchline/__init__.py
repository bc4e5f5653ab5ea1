"""Branching-line signals: band-degenerate approximation and recovery on a grid."""

from .degeneracy import (
    DegeneracyPlan,
    approximation_error,
    check_disjoint,
    choose_centers,
    degenerate_approximation,
    find_delta,
    sweep_delta,
    verify_degeneracy,
)
from .errors import BranchlineError
from .model import (
    BranchingProcess,
    Grid,
    IntervalSpec,
    Signal,
    StructureSet,
    StructureTriple,
    interval_to_index_set,
    make_grid,
    validate_structure_set,
    verify_coincidence,
)
from .recovery import (
    RecoveryProblem,
    assemble_system,
    extrapolate_from_segment,
    rank_check,
    sample_reconstruct,
    solve_direct,
    solve_projection,
)
from .spectral import (
    FrequencyBand,
    Spectrum,
    band_energy,
    difference_spectrum,
    forward_transform,
    inverse_transform,
)
from .topology import is_connected, propagation_order, related, relation_depth

__version__ = "0.1.0"
